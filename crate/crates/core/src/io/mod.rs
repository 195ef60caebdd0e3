pub mod daug;

pub use daug::{load_tensor, read_daug, save_tensor, write_daug, AnyTensor, ByteTensor, DType, IntoAny};
