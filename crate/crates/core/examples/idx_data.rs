//! Parse IDX image and label files and look at a batch.

use sparsetrain::data::{find_mnist_dir, load_mnist_dir, Normalization};

fn main() -> sparsetrain::Result<()> {
    let Some(dir) = find_mnist_dir() else {
        eprintln!("MNIST not found; put the IDX files in data/mnist or set SPARSETRAIN_DATA_DIR");
        return Ok(());
    };
    let (train, test) = load_mnist_dir(&dir, &Normalization::mnist())?;
    println!("train {} images, test {} images, {} classes", train.len(), test.len(), train.classes);
    let (x, y) = train.batch(&[0, 1, 2, 3]);
    println!("batch shape {:?}, labels {y:?}", x.shape());
    Ok(())
}
