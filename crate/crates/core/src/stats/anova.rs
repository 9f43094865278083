//! Fixed-effects three-way factorial ANOVA for balanced, replicated designs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Debug};

use serde::{Deserialize, Serialize};

use super::{f_sf, StatsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaRow {
    pub effect: String,
    pub sum_of_squares: f64,
    pub degrees_of_freedom: usize,
    pub mean_square: f64,
    pub f_value: Option<f64>,
    pub p_value: Option<f64>,
}

/// Rows in the order A, B, C, A:B, A:C, B:C, A:B:C, Error, Total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    pub factors: [String; 3],
    pub replicates: usize,
    pub rows: Vec<AnovaRow>,
}

impl AnovaTable {
    pub fn row(&self, effect: &str) -> Option<&AnovaRow> {
        self.rows.iter().find(|r| r.effect == effect)
    }

    pub fn error(&self) -> &AnovaRow {
        &self.rows[7]
    }

    pub fn total(&self) -> &AnovaRow {
        &self.rows[8]
    }
}

impl fmt::Display for AnovaTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>14} {:>6} {:>14} {:>12} {:>12}",
            "effect", "SS", "df", "MS", "F", "p"
        )?;
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        for r in &self.rows {
            writeln!(
                f,
                "{:<12} {:>14.6} {:>6} {:>14.6} {:>12} {:>12}",
                r.effect,
                r.sum_of_squares,
                r.degrees_of_freedom,
                r.mean_square,
                opt(r.f_value),
                opt(r.p_value)
            )?;
        }
        Ok(())
    }
}

/// Classical three-way decomposition with all interactions.
///
/// `cells` maps each `(a, b, c)` level combination to its replicate
/// observations. Every combination of the observed levels must be present with
/// the same number (≥ 2) of replicates.
pub fn anova3<K>(
    cells: &BTreeMap<(K, K, K), Vec<f64>>,
    names: [&str; 3],
) -> Result<AnovaTable, StatsError>
where
    K: Ord + Clone + Debug,
{
    let levels_a: Vec<K> = cells.keys().map(|k| k.0.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let levels_b: Vec<K> = cells.keys().map(|k| k.1.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let levels_c: Vec<K> = cells.keys().map(|k| k.2.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let (na, nb, nc) = (levels_a.len(), levels_b.len(), levels_c.len());
    if na < 2 || nb < 2 || nc < 2 {
        return Err(StatsError::Design(format!(
            "each factor needs at least 2 levels (got {na}, {nb}, {nc})"
        )));
    }

    let mut missing = Vec::new();
    let mut grid: Vec<&Vec<f64>> = Vec::with_capacity(na * nb * nc);
    for a in &levels_a {
        for b in &levels_b {
            for c in &levels_c {
                let key = (a.clone(), b.clone(), c.clone());
                match cells.get(&key) {
                    Some(v) => grid.push(v),
                    None => missing.push(format!("{key:?}")),
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(StatsError::Design(format!("missing cells: {}", missing.join(", "))));
    }
    let n = grid[0].len();
    let unbalanced: Vec<String> = cells
        .iter()
        .filter(|(_, v)| v.len() != n)
        .map(|(k, v)| format!("{k:?} has {} replicates", v.len()))
        .collect();
    if !unbalanced.is_empty() {
        return Err(StatsError::Design(format!(
            "unbalanced (expected {n} replicates per cell): {}",
            unbalanced.join(", ")
        )));
    }
    if n < 2 {
        return Err(StatsError::Design("at least 2 replicates per cell are required".into()));
    }

    let idx = |i: usize, j: usize, k: usize| (i * nb + j) * nc + k;
    let cell_mean: Vec<f64> = grid.iter().map(|v| v.iter().sum::<f64>() / n as f64).collect();
    let total_n = (na * nb * nc * n) as f64;
    let grand = grid.iter().flat_map(|v| v.iter()).sum::<f64>() / total_n;

    // marginal means of cell means (valid because the design is balanced)
    let mut m_a = vec![0.0; na];
    let mut m_b = vec![0.0; nb];
    let mut m_c = vec![0.0; nc];
    let mut m_ab = vec![0.0; na * nb];
    let mut m_ac = vec![0.0; na * nc];
    let mut m_bc = vec![0.0; nb * nc];
    for i in 0..na {
        for j in 0..nb {
            for k in 0..nc {
                let m = cell_mean[idx(i, j, k)];
                m_a[i] += m / (nb * nc) as f64;
                m_b[j] += m / (na * nc) as f64;
                m_c[k] += m / (na * nb) as f64;
                m_ab[i * nb + j] += m / nc as f64;
                m_ac[i * nc + k] += m / nb as f64;
                m_bc[j * nc + k] += m / na as f64;
            }
        }
    }

    let nf = n as f64;
    let ss_a = (nb * nc) as f64 * nf * m_a.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_b = (na * nc) as f64 * nf * m_b.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_c = (na * nb) as f64 * nf * m_c.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let (mut ss_ab, mut ss_ac, mut ss_bc, mut ss_abc, mut ss_e, mut ss_t) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..na {
        for j in 0..nb {
            ss_ab += (m_ab[i * nb + j] - m_a[i] - m_b[j] + grand).powi(2);
        }
        for k in 0..nc {
            ss_ac += (m_ac[i * nc + k] - m_a[i] - m_c[k] + grand).powi(2);
        }
    }
    for j in 0..nb {
        for k in 0..nc {
            ss_bc += (m_bc[j * nc + k] - m_b[j] - m_c[k] + grand).powi(2);
        }
    }
    ss_ab *= nc as f64 * nf;
    ss_ac *= nb as f64 * nf;
    ss_bc *= na as f64 * nf;
    for i in 0..na {
        for j in 0..nb {
            for k in 0..nc {
                let m = cell_mean[idx(i, j, k)];
                let inter = m - m_ab[i * nb + j] - m_ac[i * nc + k] - m_bc[j * nc + k]
                    + m_a[i]
                    + m_b[j]
                    + m_c[k]
                    - grand;
                ss_abc += inter * inter;
                for y in grid[idx(i, j, k)] {
                    ss_e += (y - m).powi(2);
                    ss_t += (y - grand).powi(2);
                }
            }
        }
    }
    ss_abc *= nf;

    let (da, db, dc) = (na - 1, nb - 1, nc - 1);
    let df_e = na * nb * nc * (n - 1);
    let ms_e = ss_e / df_e as f64;
    // Residuals at rounding level (identical replicates) leave F undefined.
    let scale = grid.iter().flat_map(|v| v.iter()).fold(0.0f64, |m, y| m.max(y.abs()));
    let error_free = ss_e <= total_n * (8.0 * f64::EPSILON * scale).powi(2);

    let [a, b, c] = names;
    let effects = [
        (a.to_string(), ss_a, da),
        (b.to_string(), ss_b, db),
        (c.to_string(), ss_c, dc),
        (format!("{a}:{b}"), ss_ab, da * db),
        (format!("{a}:{c}"), ss_ac, da * dc),
        (format!("{b}:{c}"), ss_bc, db * dc),
        (format!("{a}:{b}:{c}"), ss_abc, da * db * dc),
    ];
    let mut rows = Vec::with_capacity(9);
    for (effect, ss, df) in effects {
        let ms = ss / df as f64;
        let (f_value, p_value) = if !error_free {
            let f = ms / ms_e;
            (Some(f), Some(f_sf(f, df as f64, df_e as f64)?))
        } else {
            (None, None)
        };
        rows.push(AnovaRow {
            effect,
            sum_of_squares: ss,
            degrees_of_freedom: df,
            mean_square: ms,
            f_value,
            p_value,
        });
    }
    rows.push(AnovaRow {
        effect: "Error".into(),
        sum_of_squares: ss_e,
        degrees_of_freedom: df_e,
        mean_square: ms_e,
        f_value: None,
        p_value: None,
    });
    let df_t = na * nb * nc * n - 1;
    rows.push(AnovaRow {
        effect: "Total".into(),
        sum_of_squares: ss_t,
        degrees_of_freedom: df_t,
        mean_square: ss_t / df_t as f64,
        f_value: None,
        p_value: None,
    });

    Ok(AnovaTable {
        factors: [a.to_string(), b.to_string(), c.to_string()],
        replicates: n,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn additive() -> BTreeMap<(u8, u8, u8), Vec<f64>> {
        let a = [-1.0, 0.5, 0.5];
        let b = [2.0, -2.0];
        let c = [0.3, -0.1, -0.4, 0.2];
        let mut cells = BTreeMap::new();
        for (i, ai) in a.iter().enumerate() {
            for (j, bj) in b.iter().enumerate() {
                for (k, ck) in c.iter().enumerate() {
                    cells.insert((i as u8, j as u8, k as u8), vec![10.0 + ai + bj + ck; 3]);
                }
            }
        }
        cells
    }

    #[test]
    fn additive_model_has_no_interactions() {
        let t = anova3(&additive(), ["A", "B", "C"]).unwrap();
        let total = t.total().sum_of_squares;
        for r in &t.rows[3..8] {
            assert!(r.sum_of_squares <= 1e-9 * total, "{}: {}", r.effect, r.sum_of_squares);
        }
        // Σ n·(other levels)·effect²
        let n = 3.0;
        assert!((t.rows[0].sum_of_squares - n * 2.0 * 4.0 * 1.5).abs() < 1e-9);
        assert!((t.rows[1].sum_of_squares - n * 3.0 * 4.0 * 8.0).abs() < 1e-9);
        assert!((t.rows[2].sum_of_squares - n * 3.0 * 2.0 * 0.3).abs() < 1e-9);
        // zero error variance leaves F undefined
        assert!(t.rows[0].f_value.is_none());
    }

    #[test]
    fn rejects_missing_and_unbalanced() {
        let mut cells = additive();
        cells.remove(&(1, 1, 2));
        match anova3(&cells, ["A", "B", "C"]) {
            Err(StatsError::Design(msg)) => assert!(msg.contains("(1, 1, 2)"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let mut cells = additive();
        cells.get_mut(&(0, 1, 3)).unwrap().push(4.0);
        match anova3(&cells, ["A", "B", "C"]) {
            Err(StatsError::Design(msg)) => assert!(msg.contains("(0, 1, 3)"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let single: BTreeMap<_, _> = additive().into_iter().map(|(k, v)| (k, v[..1].to_vec())).collect();
        assert!(anova3(&single, ["A", "B", "C"]).is_err());
    }
}
