//! Dice similarity and normalised surface distance for integer masks.
//!
//! Distances are Euclidean between pixel centres. Surface points are the
//! region pixels with at least one 4-neighbour outside the region, where the
//! image border counts as outside. Distances to a surface come from an exact
//! squared Euclidean distance transform, so `d ≤ τ` is decided on integers.

use crate::error::{Error, Result};

pub const DEFAULT_TAU: f64 = 1.0;

/// A metric value plus the conventions that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub value: f64,
    /// Neither mask contains the class; `value` is 1 by convention.
    pub both_empty: bool,
    /// Exactly one mask contains the class; `value` is 0 by convention.
    pub one_empty: bool,
}

impl Score {
    fn plain(value: f64) -> Self {
        Self {
            value,
            both_empty: false,
            one_empty: false,
        }
    }

    pub fn flags(&self) -> &'static str {
        match (self.both_empty, self.one_empty) {
            (true, _) => "both_empty",
            (_, true) => "one_empty",
            _ => "",
        }
    }
}

/// Ground truth and prediction of one `h×w` image.
#[derive(Debug, Clone, Copy)]
pub struct MaskPair<'a> {
    pub truth: &'a [u16],
    pub pred: &'a [u16],
    pub height: usize,
    pub width: usize,
}

impl<'a> MaskPair<'a> {
    pub fn new(truth: &'a [u16], pred: &'a [u16], height: usize, width: usize) -> Result<Self> {
        if truth.len() != height * width || pred.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "masks of {} and {} pixels for a {height}×{width} image",
                truth.len(),
                pred.len()
            )));
        }
        Ok(Self {
            truth,
            pred,
            height,
            width,
        })
    }
}

/// `2|G∩P| / (|G|+|P|)` for one class.
pub fn dsc(pair: &MaskPair<'_>, class: u16) -> Score {
    let (mut g, mut p, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in pair.truth.iter().zip(pair.pred) {
        let (ia, ib) = (a == class, b == class);
        g += ia as usize;
        p += ib as usize;
        both += (ia && ib) as usize;
    }
    if g + p == 0 {
        return Score {
            value: 1.0,
            both_empty: true,
            one_empty: false,
        };
    }
    Score {
        value: 2.0 * both as f64 / (g + p) as f64,
        both_empty: false,
        one_empty: g == 0 || p == 0,
    }
}

/// Surface pixels of a binary region as `(row, col)`, row-major.
pub fn boundary(region: &[bool], height: usize, width: usize) -> Vec<(usize, usize)> {
    let inside = |i: isize, j: isize| {
        i >= 0 && j >= 0 && (i as usize) < height && (j as usize) < width && region[i as usize * width + j as usize]
    };
    let mut out = Vec::new();
    for i in 0..height {
        for j in 0..width {
            if !region[i * width + j] {
                continue;
            }
            let (y, x) = (i as isize, j as isize);
            if !(inside(y - 1, x) && inside(y + 1, x) && inside(y, x - 1) && inside(y, x + 1)) {
                out.push((i, j));
            }
        }
    }
    out
}

const FAR: i64 = i64::MAX / 4;

/// One-dimensional squared distance transform of `f` (lower envelope of
/// parabolas), exact for integer inputs.
fn edt_1d(f: &[i64], out: &mut [i64]) {
    let n = f.len();
    let sites: Vec<usize> = (0..n).filter(|&q| f[q] < FAR).collect();
    if sites.is_empty() {
        out.fill(FAR);
        return;
    }
    // Intersection abscissa of the parabolas rooted at q and v, as a
    // fraction num/den with den > 0.
    let cross = |q: usize, v: usize| -> (i64, i64) {
        let (qi, vi) = (q as i64, v as i64);
        ((f[q] + qi * qi) - (f[v] + vi * vi), 2 * (qi - vi))
    };
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    // z[k] is the left boundary of parabola v[k], as a fraction.
    let mut z: Vec<(i64, i64)> = Vec::with_capacity(sites.len());
    for &q in &sites {
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.push((-1, 0));
                    break;
                }
                Some(&top) => {
                    let s = cross(q, top);
                    let zl = *z.last().unwrap();
                    // Pop while s <= z[k]; the first entry is -infinity.
                    let le = zl.1 != 0 && (s.0 as i128) * (zl.1 as i128) <= (zl.0 as i128) * (s.1 as i128);
                    if le {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    let mut k = 0;
    for (x, o) in out.iter_mut().enumerate() {
        // Advance while the next parabola starts at or before x.
        while k + 1 < v.len() && (z[k + 1].0 as i128) <= (x as i128) * (z[k + 1].1 as i128) {
            k += 1;
        }
        let d = x as i64 - v[k] as i64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every pixel to the nearest site.
pub fn squared_distance_map(sites: &[(usize, usize)], height: usize, width: usize) -> Vec<i64> {
    let mut grid = vec![FAR; height * width];
    for &(i, j) in sites {
        grid[i * width + j] = 0;
    }
    let mut col = vec![0; height];
    let mut tmp = vec![0; height];
    for j in 0..width {
        for i in 0..height {
            col[i] = grid[i * width + j];
        }
        edt_1d(&col, &mut tmp);
        for i in 0..height {
            grid[i * width + j] = tmp[i];
        }
    }
    let mut row = vec![0; width];
    for i in 0..height {
        edt_1d(&grid[i * width..(i + 1) * width], &mut row);
        grid[i * width..(i + 1) * width].copy_from_slice(&row);
    }
    grid
}

fn within(d2: i64, tau: f64) -> bool {
    d2 < FAR && (d2 as f64) <= tau * tau
}

/// Fraction of surface points of either mask lying within `tau` of the
/// other mask's surface.
pub fn nsd(pair: &MaskPair<'_>, class: u16, tau: f64) -> Result<Score> {
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::InvalidArgument(format!("tau must be >= 0, got {tau}")));
    }
    let (h, w) = (pair.height, pair.width);
    let region = |m: &[u16]| m.iter().map(|&v| v == class).collect::<Vec<_>>();
    let sg = boundary(&region(pair.truth), h, w);
    let sp = boundary(&region(pair.pred), h, w);
    match (sg.is_empty(), sp.is_empty()) {
        (true, true) => {
            return Ok(Score {
                value: 1.0,
                both_empty: true,
                one_empty: false,
            })
        }
        (true, false) | (false, true) => {
            return Ok(Score {
                value: 0.0,
                both_empty: false,
                one_empty: true,
            })
        }
        _ => {}
    }
    let dg = squared_distance_map(&sg, h, w);
    let dp = squared_distance_map(&sp, h, w);
    let hits = sp.iter().filter(|&&(i, j)| within(dg[i * w + j], tau)).count()
        + sg.iter().filter(|&&(i, j)| within(dp[i * w + j], tau)).count();
    Ok(Score::plain(hits as f64 / (sp.len() + sg.len()) as f64))
}

/// Per-class metrics of one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub class: u16,
    pub dsc: Score,
    pub nsd: Score,
}

/// Scores every foreground class `1..num_classes`.
pub fn evaluate(pair: &MaskPair<'_>, num_classes: usize, tau: f64) -> Result<Vec<ClassMetrics>> {
    for &v in pair.truth.iter().chain(pair.pred) {
        if v as usize >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: v as usize,
                num_classes,
            });
        }
    }
    (1..num_classes as u16)
        .map(|c| {
            Ok(ClassMetrics {
                class: c,
                dsc: dsc(pair, c),
                nsd: nsd(pair, c, tau)?,
            })
        })
        .collect()
}

/// Mean DSC and NSD over all given rows.
pub fn mean_scores(rows: &[ClassMetrics]) -> (f64, f64) {
    if rows.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = rows.len() as f64;
    (
        rows.iter().map(|r| r.dsc.value).sum::<f64>() / n,
        rows.iter().map(|r| r.nsd.value).sum::<f64>() / n,
    )
}

/// Mean foreground DSC over a batch of `[B, H, W]` masks.
pub fn mean_foreground_dsc(truth: &[u16], pred: &[u16], height: usize, width: usize, num_classes: usize) -> Result<f64> {
    let hw = height * width;
    let mut rows = Vec::new();
    for (g, p) in truth.chunks(hw).zip(pred.chunks(hw)) {
        let pair = MaskPair::new(g, p, height, width)?;
        rows.extend((1..num_classes as u16).map(|c| dsc(&pair, c).value));
    }
    Ok(rows.iter().sum::<f64>() / rows.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn pair<'a>(g: &'a [u16], p: &'a [u16], h: usize, w: usize) -> MaskPair<'a> {
        MaskPair::new(g, p, h, w).unwrap()
    }

    #[test]
    fn dsc_hand_cases() {
        let g = [1, 1, 0, 0];
        assert_eq!(dsc(&pair(&g, &g, 2, 2), 1).value, 1.0);
        assert_eq!(dsc(&pair(&g, &[0, 0, 1, 1], 2, 2), 1).value, 0.0);
        let g = [1, 1, 1, 1, 0, 0, 0, 0];
        let p = [0, 0, 1, 1, 1, 1, 0, 0];
        assert_eq!(dsc(&pair(&g, &p, 2, 4), 1).value, 0.5);
        let e = dsc(&pair(&[0; 4], &[0; 4], 2, 2), 1);
        assert!(e.both_empty && e.value == 1.0);
    }

    fn region(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> Vec<bool> {
        (0..h * w).map(|p| f(p / w, p % w)).collect()
    }

    #[test]
    fn boundary_hand_cases() {
        assert_eq!(boundary(&region(3, 3, |i, j| i == 1 && j == 1), 3, 3), [(1, 1)]);
        let square = boundary(&region(5, 5, |i, j| (1..4).contains(&i) && (1..4).contains(&j)), 5, 5);
        assert_eq!(square.len(), 8);
        assert!(!square.contains(&(2, 2)));
        let full = boundary(&region(4, 5, |_, _| true), 4, 5);
        assert_eq!(full.len(), 2 * 5 + 2 * 2);
        assert!(full.iter().all(|&(i, j)| i == 0 || j == 0 || i == 3 || j == 4));
    }

    #[test]
    fn nsd_hand_cases() {
        let g = [0, 1, 0, 0];
        assert_eq!(nsd(&pair(&g, &g, 2, 2), 1, 0.0).unwrap().value, 1.0);
        // Single pixels one step apart.
        let (a, b) = ([1, 0, 0, 0], [0, 1, 0, 0]);
        assert_eq!(nsd(&pair(&a, &b, 2, 2), 1, 1.0).unwrap().value, 1.0);
        assert_eq!(nsd(&pair(&a, &b, 2, 2), 1, 0.5).unwrap().value, 0.0);
        // Diagonal neighbours are √2 apart.
        let c = [0, 0, 0, 1];
        assert_eq!(nsd(&pair(&a, &c, 2, 2), 1, 1.0).unwrap().value, 0.0);
        assert_eq!(nsd(&pair(&a, &c, 2, 2), 1, 1.5).unwrap().value, 1.0);
        let far_apart = nsd(&pair(&a, &c, 2, 2), 1, f64::INFINITY).unwrap();
        assert_eq!(far_apart.value, 1.0);
        let one = nsd(&pair(&a, &[0; 4], 2, 2), 1, 1.0).unwrap();
        assert!(one.one_empty && one.value == 0.0);
        let none = nsd(&pair(&[0; 4], &[0; 4], 2, 2), 1, 1.0).unwrap();
        assert!(none.both_empty && none.value == 1.0);
        assert!(nsd(&pair(&a, &b, 2, 2), 1, -1.0).is_err());
    }

    fn brute_d2(sites: &[(usize, usize)], i: usize, j: usize) -> i64 {
        sites
            .iter()
            .map(|&(a, b)| {
                let (di, dj) = (a as i64 - i as i64, b as i64 - j as i64);
                di * di + dj * dj
            })
            .min()
            .unwrap_or(FAR)
    }

    fn masks(h: usize, w: usize) -> impl Strategy<Value = (Vec<u16>, Vec<u16>)> {
        (
            proptest::collection::vec(0u16..3, h * w),
            proptest::collection::vec(0u16..3, h * w),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn distance_map_matches_brute_force(h in 1usize..12, w in 1usize..12, seed in proptest::collection::vec(any::<bool>(), 144)) {
            let sites: Vec<(usize, usize)> = (0..h * w).filter(|&p| seed[p]).map(|p| (p / w, p % w)).collect();
            let d = squared_distance_map(&sites, h, w);
            for i in 0..h {
                for j in 0..w {
                    prop_assert_eq!(d[i * w + j], brute_d2(&sites, i, j));
                }
            }
        }

        #[test]
        fn symmetric_and_bounded((g, p) in masks(6, 7), tau in 0.0f64..4.0) {
            let a = pair(&g, &p, 6, 7);
            let b = pair(&p, &g, 6, 7);
            for c in 0..3 {
                prop_assert_eq!(dsc(&a, c).value, dsc(&b, c).value);
                let (x, y) = (nsd(&a, c, tau).unwrap().value, nsd(&b, c, tau).unwrap().value);
                prop_assert_eq!(x, y);
                prop_assert!((0.0..=1.0).contains(&x));
                prop_assert!((0.0..=1.0).contains(&dsc(&a, c).value));
            }
        }

        #[test]
        fn monotone_in_tau((g, p) in masks(5, 5), t1 in 0.0f64..3.0, dt in 0.0f64..3.0) {
            let a = pair(&g, &p, 5, 5);
            for c in 0..3 {
                prop_assert!(nsd(&a, c, t1).unwrap().value <= nsd(&a, c, t1 + dt).unwrap().value);
            }
        }
    }

    #[test]
    fn evaluate_skips_background() {
        let g = [0, 1, 2, 2];
        let rows = evaluate(&pair(&g, &g, 2, 2), 3, 1.0).unwrap();
        assert_eq!(rows.iter().map(|r| r.class).collect::<Vec<_>>(), [1, 2]);
        assert_eq!(mean_scores(&rows), (1.0, 1.0));
        assert!(evaluate(&pair(&g, &g, 2, 2), 2, 1.0).is_err());
    }
}
