use super::LabelMask;

/// `2|P ∩ G| / (|P| + |G|)` for class `c`; both empty counts as a perfect 1.
pub fn dice_score(pred: &LabelMask, gt: &LabelMask, c: usize) -> f64 {
    assert_eq!(pred.dims(), gt.dims(), "dice_score needs equal shapes");
    let (mut p, mut g, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        let (ia, ib) = (a as usize == c, b as usize == c);
        p += ia as usize;
        g += ib as usize;
        both += (ia && ib) as usize;
    }
    if p + g == 0 {
        1.0
    } else {
        2.0 * both as f64 / (p + g) as f64
    }
}

/// Dice averaged over the foreground classes `1..K`.
pub fn mean_foreground_dice(pred: &LabelMask, gt: &LabelMask) -> f64 {
    let k = gt.num_classes();
    (1..k).map(|c| dice_score(pred, gt, c)).sum::<f64>() / (k - 1) as f64
}
