//! Building blocks: convolution, pooling, softmax, upsampling, normalization.

use camshap::tensor::{self, PoolMode};
use camshap::Tensor;

fn main() -> camshap::Result<()> {
    let image = Tensor::from_fn(&[1, 4, 4], |i| i as f32);
    let edge = Tensor::new(vec![1, 1, 1, 2], vec![-1.0, 1.0])?;
    let conv = tensor::conv2d(&image, &edge, &[0.0], 1, 0)?;
    println!("horizontal difference {:?}: {:?}", conv.shape(), conv.data());

    let pooled = tensor::pool(&image, PoolMode::Max, 2, 2)?;
    println!("2x2 max-pool: {:?}", pooled.data());

    let probs = tensor::softmax(&[2.0, 1.0, 0.1]);
    println!("softmax: {probs:.4?}");

    let small = Tensor::new(vec![2, 2], vec![0.0, 1.0, 2.0, 3.0])?;
    let up = tensor::upsample_bilinear(&small, (4, 4))?;
    let norm = tensor::minmax_normalize(&up);
    for row in norm.data().chunks(4) {
        println!("{row:.3?}");
    }
    Ok(())
}
