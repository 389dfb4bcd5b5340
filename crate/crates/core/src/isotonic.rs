//! Pool-adjacent-violators for nondecreasing least-squares fits.

/// Replaces `values` with its unweighted nondecreasing isotonic fit.
pub fn pava_in_place(values: &mut [f64]) {
    let n = values.len();
    if n < 2 {
        return;
    }
    // blocks of (sum, count)
    let mut sums: Vec<f64> = Vec::with_capacity(n);
    let mut counts: Vec<usize> = Vec::with_capacity(n);
    for &v in values.iter() {
        sums.push(v);
        counts.push(1);
        while sums.len() > 1 {
            let k = sums.len();
            let last = sums[k - 1] / counts[k - 1] as f64;
            let prev = sums[k - 2] / counts[k - 2] as f64;
            if prev <= last {
                break;
            }
            let (s, c) = (sums.pop().unwrap(), counts.pop().unwrap());
            sums[k - 2] += s;
            counts[k - 2] += c;
        }
    }
    let mut i = 0;
    for (s, c) in sums.iter().zip(&counts) {
        let mean = s / *c as f64;
        for v in &mut values[i..i + c] {
            *v = mean;
        }
        i += c;
    }
}
