//! The bundled 8×8 digit classifier: a 64-144-10 MLP with 4-bit weights,
//! 200 calibration images and 360 held-out test images. Regenerate with
//! `tools/train_digits.py`.

use super::network::{labels_from_tensor, samples_from_tensor, ModelFile, Network};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MODEL: &str = include_str!("../../data/digits/model.json");
const FILES: [(&str, &str); 5] = [
    ("fc1.csv", include_str!("../../data/digits/fc1.csv")),
    ("fc2.csv", include_str!("../../data/digits/fc2.csv")),
    ("calib_x.csv", include_str!("../../data/digits/calib_x.csv")),
    ("test_x.csv", include_str!("../../data/digits/test_x.csv")),
    ("test_y.csv", include_str!("../../data/digits/test_y.csv")),
];

fn bundled(name: &str) -> Result<String> {
    FILES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| text.to_string())
        .ok_or_else(|| Error::Data(format!("no bundled file `{name}`")))
}

/// Mapped and calibrated bundled network.
pub fn load_bundled() -> Result<Network> {
    let model: ModelFile = serde_json::from_str(MODEL)?;
    Network::from_model(&model, &bundled)
}

/// `(images, labels)` of the bundled test split.
pub fn load_bundled_test_set() -> Result<(Vec<Vec<u32>>, Vec<usize>)> {
    let x = Tensor::<u32>::from_csv_str(&bundled("test_x.csv")?)?;
    let y = Tensor::<u32>::from_csv_str(&bundled("test_y.csv")?)?;
    Ok((samples_from_tensor(&x), labels_from_tensor(&y)))
}

/// Write the bundled model and data files into `dir`.
pub fn export_bundled(dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, text) in std::iter::once(("model.json", MODEL)).chain(FILES) {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::integer_reference;

    #[test]
    fn bundled_model_loads() {
        let net = load_bundled().unwrap();
        assert_eq!(net.input_len(), 64);
        assert_eq!(net.output_len(), 10);
        assert_eq!(net.layers()[0].mapping().unwrap().banks_used(), 1);
        assert_eq!(net.layers()[1].mapping().unwrap().base_bank(), 1);
        let (x, y) = load_bundled_test_set().unwrap();
        assert_eq!((x.len(), y.len()), (360, 360));
        let r = integer_reference(&net, &x, &y).unwrap();
        assert!(r.accuracy > 0.9, "{}", r.accuracy);
    }

    #[test]
    fn export_matches_bundle() {
        let dir = tempfile::tempdir().unwrap();
        export_bundled(dir.path()).unwrap();
        let net = Network::load(dir.path().join("model.json")).unwrap();
        let bundled = load_bundled().unwrap();
        for (a, b) in net.layers().iter().zip(bundled.layers()) {
            assert_eq!(a.weights(), b.weights());
            assert_eq!((a.shift(), a.gain()), (b.shift(), b.gain()));
        }
    }
}
