use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

#[inline]
pub(crate) fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Stack two row blocks with the same column count.
pub(crate) fn vstack(top: ArrayView2<f64>, bottom: ArrayView2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(0), &[top, bottom]).expect("column counts checked by caller")
}

/// Index of the largest value, ties to the lowest index.
pub(crate) fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    best
}

/// Per-column mean and sample standard deviation over the given rows.
pub(crate) fn column_mean_sd(x: ArrayView2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let mut means = Vec::with_capacity(x.ncols());
    let mut sds = Vec::with_capacity(x.ncols());
    for col in x.columns() {
        let mean = col.sum() / n;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let denom = if n > 1.0 { n - 1.0 } else { 1.0 };
        means.push(mean);
        sds.push((ss / denom).sqrt());
    }
    (means, sds)
}

/// Serde adapter storing a matrix as an array of rows.
pub(crate) mod matrix_rows {
    use ndarray::Array2;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Array2::from_shape_vec((flat.len().checked_div(ncols).unwrap_or(0), ncols), flat)
            .map_err(D::Error::custom)
    }
}
