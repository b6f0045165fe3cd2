//! Empirical Young measures on micropatterns.
//!
//! An atom sits at a macro point `x` and carries the coefficient and profile
//! windows seen from the micro point `x/ε`. Windows are snapped to the nodes
//! of the micro profile, so an atom's windows are exact copies of the global
//! data and every quantity computed from atoms can be recomputed from the
//! global profile with the same floating-point operations.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeff::{CoefficientField, FieldModel, MacroModulus};
use crate::diffuse::{window_integral, MicroProfile};
use crate::error::{HomlabError, Result};
use crate::real::Real;
use crate::stats::ks_distance;
use crate::well::QuarticWell;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowAtom<T> {
    pub x: T,
    /// Micro coordinate of the window centre (a node of the profile grid).
    pub center: T,
    /// `m(x)`.
    pub m: T,
    pub coeff_window: Vec<T>,
    pub profile_window: Vec<T>,
    pub weight: T,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: Option<FieldModel>,
    pub seed: Option<u64>,
    pub minimizer: String,
}

/// Atoms with windows of `2·half + 3` nodes, i.e. `[-W/2, W/2]` plus one
/// stencil node on each side.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure<T> {
    pub atoms: Vec<WindowAtom<T>>,
    pub eps: T,
    pub window: T,
    pub step: T,
    pub half: usize,
    pub requested: usize,
    pub dropped: usize,
    pub provenance: Provenance,
}

/// Offsets `(a, K)` of the unit window: nodes `c - a ..= c - a + K` around
/// centre node `c`.
fn unit_offsets<T: Real>(step: T) -> (usize, usize) {
    let k = (T::one() / step).round().to_usize().unwrap_or(1);
    let a = (T::lit(0.5) / step).round().to_usize().unwrap_or(0);
    (a, k)
}

/// `N` equally weighted atoms at `x_i = (i + 1/2)/N`; atoms whose window
/// leaves the profile data are dropped and the rest renormalized.
pub fn window_samples<T: Real>(
    u: &MicroProfile<T>,
    field: &CoefficientField<T>,
    modulus: &MacroModulus,
    eps: T,
    window: T,
    n: usize,
) -> Result<EmpiricalMeasure<T>> {
    if !(window >= T::one()) {
        return Err(HomlabError::Parameter(format!(
            "window must be at least 1, got {window}"
        )));
    }
    if n < 10 {
        return Err(HomlabError::Parameter(format!(
            "need at least 10 atoms, got {n}"
        )));
    }
    if !(eps > T::zero()) {
        return Err(HomlabError::Parameter("eps must be positive".into()));
    }
    modulus.validate()?;
    let step = u.step();
    let half = (window / (T::lit(2.0) * step))
        .round()
        .to_usize()
        .unwrap_or(0);
    let span = 2 * half + 3;
    if u.values().len() < span {
        return Err(HomlabError::Shape(format!(
            "profile has {} nodes, a window needs {span}",
            u.values().len()
        )));
    }
    let nn = T::from_usize_lossy(n);
    let mut atoms: Vec<WindowAtom<T>> = (0..n)
        .into_par_iter()
        .filter_map(|i| {
            let x = (T::from_usize_lossy(i) + T::lit(0.5)) / nn;
            let c = ((x / eps - u.t0()) / step).round();
            if c < T::from_usize_lossy(half + 1) {
                return None;
            }
            let c = c.to_usize()?;
            let first = c - half - 1;
            if first + span > u.values().len() {
                return None;
            }
            Some(WindowAtom {
                x,
                center: u.t(c),
                m: modulus.eval_unchecked(x),
                coeff_window: (first..first + span).map(|j| field.eval(u.t(j))).collect(),
                profile_window: u.values()[first..first + span].to_vec(),
                weight: T::zero(),
            })
        })
        .collect();
    if atoms.is_empty() {
        return Err(HomlabError::Shape(
            "every window overflows the profile data".into(),
        ));
    }
    let w = T::one() / T::from_usize_lossy(atoms.len());
    atoms.iter_mut().for_each(|a| a.weight = w);
    Ok(EmpiricalMeasure {
        dropped: n - atoms.len(),
        atoms,
        eps,
        window,
        step,
        half,
        requested: n,
        provenance: Provenance {
            model: Some(field.model().clone()),
            seed: Some(field.seed()),
            minimizer: String::new(),
        },
    })
}

impl<T: Real> EmpiricalMeasure<T> {
    pub fn total_weight(&self) -> T {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// Node index of the window centre.
    fn mid(&self) -> usize {
        self.half + 1
    }

    /// `f_ε^{ω,x}(u, y)` of one atom for the node shift `o` (`y ≈ o·step`).
    fn integrand(&self, atom: &WindowAtom<T>, o: isize) -> T {
        let (a, k) = unit_offsets(self.step);
        let i0 = (self.mid() as isize + o) as usize - a;
        window_integral(
            &atom.profile_window,
            self.step,
            i0,
            i0 + k,
            self.eps,
            atom.m,
            &QuarticWell,
            |i| atom.coeff_window[i],
        )
    }

    /// Node shift for `y`, checking that the shifted unit window and its
    /// stencils stay inside the stored window.
    fn shift_nodes(&self, y: T) -> Result<isize> {
        let o = (y / self.step).round().to_isize().unwrap_or(isize::MAX);
        let (a, _) = unit_offsets(self.step);
        if o.unsigned_abs() + a > self.half || y.abs() > self.window / T::lit(4.0) {
            return Err(HomlabError::Domain(format!(
                "shift {y} moves the unit window outside the stored window of length {}",
                self.window
            )));
        }
        Ok(o)
    }

    /// Observables of one atom after shifting by `o` nodes: mean of `a`,
    /// energy density and mean `|u'|`, all over the unit window.
    fn observables(&self, atom: &WindowAtom<T>, o: isize) -> [f64; 3] {
        let (a, k) = unit_offsets(self.step);
        let i0 = (self.mid() as isize + o) as usize - a;
        let kk = T::from_usize_lossy(k + 1);
        let mean_a = atom.coeff_window[i0..=i0 + k].iter().copied().sum::<T>() / kk;
        let inv2 = T::one() / (T::lit(2.0) * self.step);
        let mean_du = (i0..=i0 + k)
            .map(|i| ((atom.profile_window[i + 1] - atom.profile_window[i - 1]) * inv2).abs())
            .sum::<T>()
            / kk;
        [
            mean_a.as_f64(),
            self.integrand(atom, o).as_f64(),
            mean_du.as_f64(),
        ]
    }
}

/// `∫ Φ dP` with `Φ(f, u) = f(u, 0)`.
pub fn energy_from_measure<T: Real>(p: &EmpiricalMeasure<T>) -> Result<T> {
    let (a, k) = unit_offsets(p.step);
    if k > 2 * p.half || a > p.half {
        return Err(HomlabError::Shape(
            "window shorter than the unit window".into(),
        ));
    }
    Ok(p.atoms
        .iter()
        .map(|at| at.weight * p.integrand(at, 0))
        .sum())
}

/// `∫ Φ dP` restricted to atoms with `x ∈ [lo, hi)` and renormalized.
pub fn energy_on_interval<T: Real>(p: &EmpiricalMeasure<T>, lo: T, hi: T) -> Result<T> {
    let sel: Vec<&WindowAtom<T>> = p.atoms.iter().filter(|a| a.x >= lo && a.x < hi).collect();
    if sel.is_empty() {
        return Err(HomlabError::Domain(format!("no atoms in [{lo}, {hi})")));
    }
    Ok(sel.iter().map(|at| p.integrand(at, 0)).sum::<T>() / T::from_usize_lossy(sel.len()))
}

/// The Riemann sum `Σ_i w_i f_ε^{ω,x_i}(u, x_i/ε)` evaluated directly on the
/// global profile at the atoms' positions and weights.
pub fn direct_energy_sum<T: Real>(
    u: &MicroProfile<T>,
    field: &CoefficientField<T>,
    p: &EmpiricalMeasure<T>,
) -> Result<T> {
    let (a, k) = unit_offsets(u.step());
    let mut acc = T::zero();
    for at in &p.atoms {
        let c = ((at.center - u.t0()) / u.step())
            .round()
            .to_usize()
            .unwrap_or(0);
        if c < a + 1 || c - a + k + 1 >= u.values().len() {
            return Err(HomlabError::Domain(format!(
                "atom at x = {} leaves the profile",
                at.x
            )));
        }
        let i0 = c - a;
        acc += at.weight
            * window_integral(
                u.values(),
                u.step(),
                i0,
                i0 + k,
                p.eps,
                at.m,
                &QuarticWell,
                |i| field.eval(u.t(i)),
            );
    }
    Ok(acc)
}

/// Largest Kolmogorov distance, over the three window observables, between
/// the atoms and the atoms shifted by `y`.
pub fn invariance_diagnostic<T: Real>(p: &EmpiricalMeasure<T>, y: T) -> Result<f64> {
    let o = p.shift_nodes(y)?;
    let base: Vec<[f64; 3]> = p.atoms.par_iter().map(|a| p.observables(a, 0)).collect();
    let moved: Vec<[f64; 3]> = p.atoms.par_iter().map(|a| p.observables(a, o)).collect();
    Ok((0..3)
        .map(|j| {
            let x: Vec<f64> = base.iter().map(|v| v[j]).collect();
            let z: Vec<f64> = moved.iter().map(|v| v[j]).collect();
            ks_distance(&x, &z)
        })
        .fold(0.0, f64::max))
}

/// Kolmogorov distance between the law of the unit-window mean of `a` under
/// the atoms and under fresh realizations windowed at the origin.
pub fn marginal_q_diagnostic<T: Real>(
    p: &EmpiricalMeasure<T>,
    model: &FieldModel,
    reference_seeds: &[u64],
) -> Result<f64> {
    model.validate()?;
    if reference_seeds.is_empty() {
        return Err(HomlabError::Parameter("need reference seeds".into()));
    }
    let (a, k) = unit_offsets(p.step);
    let kk = T::from_usize_lossy(k + 1);
    let atoms: Vec<f64> = p.atoms.iter().map(|at| p.observables(at, 0)[0]).collect();
    let reference: Vec<f64> = reference_seeds
        .par_iter()
        .map(|s| {
            let f = CoefficientField::<T>::realize(model, *s)?;
            let t0 = -T::from_usize_lossy(a) * p.step;
            Ok((f.sample(t0, p.step, k + 1).into_iter().sum::<T>() / kk).as_f64())
        })
        .collect::<Result<_>>()?;
    Ok(ks_distance(&atoms, &reference))
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    eps: f64,
    window: f64,
    step: f64,
    half: usize,
    requested: usize,
    kept: usize,
    dropped: usize,
    provenance: Provenance,
    format: String,
}

fn write_f64s(path: &Path, xs: impl Iterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = xs.flat_map(f64::to_le_bytes).collect();
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f64s(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(HomlabError::Io(format!(
            "{} is not a float64 array",
            path.display()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

impl<T: Real> EmpiricalMeasure<T> {
    /// `manifest.json`, `atoms.csv` and `windows/atom_NNNNN.bin` (coefficient
    /// window followed by profile window, little-endian f64).
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("windows"))?;
        let manifest = Manifest {
            eps: self.eps.as_f64(),
            window: self.window.as_f64(),
            step: self.step.as_f64(),
            half: self.half,
            requested: self.requested,
            kept: self.atoms.len(),
            dropped: self.dropped,
            provenance: self.provenance.clone(),
            format: "f64-le: coeff_window then profile_window".into(),
        };
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        let mut w = csv::Writer::from_path(dir.join("atoms.csv"))?;
        w.write_record([
            "index",
            "x",
            "center",
            "m",
            "weight",
            "mean_a",
            "energy",
            "mean_abs_du",
        ])?;
        for (i, at) in self.atoms.iter().enumerate() {
            let obs = self.observables(at, 0);
            w.write_record([
                i.to_string(),
                at.x.as_f64().to_string(),
                at.center.as_f64().to_string(),
                at.m.as_f64().to_string(),
                at.weight.as_f64().to_string(),
                obs[0].to_string(),
                obs[1].to_string(),
                obs[2].to_string(),
            ])?;
            write_f64s(
                &dir.join("windows").join(format!("atom_{i:05}.bin")),
                at.coeff_window
                    .iter()
                    .chain(&at.profile_window)
                    .map(|v| v.as_f64()),
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let span = 2 * m.half + 3;
        let mut r = csv::Reader::from_path(dir.join("atoms.csv"))?;
        let mut atoms = Vec::with_capacity(m.kept);
        for rec in r.records() {
            let rec = rec?;
            let field = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| HomlabError::Io(format!("bad atoms.csv column {k}")))
            };
            let i = field(0)? as usize;
            let raw = read_f64s(&dir.join("windows").join(format!("atom_{i:05}.bin")))?;
            if raw.len() != 2 * span {
                return Err(HomlabError::Shape(format!(
                    "atom {i} holds {} values, expected {}",
                    raw.len(),
                    2 * span
                )));
            }
            atoms.push(WindowAtom {
                x: T::lit(field(1)?),
                center: T::lit(field(2)?),
                m: T::lit(field(3)?),
                weight: T::lit(field(4)?),
                coeff_window: raw[..span].iter().map(|v| T::lit(*v)).collect(),
                profile_window: raw[span..].iter().map(|v| T::lit(*v)).collect(),
            });
        }
        Ok(Self {
            atoms,
            eps: T::lit(m.eps),
            window: T::lit(m.window),
            step: T::lit(m.step),
            half: m.half,
            requested: m.requested,
            dropped: m.dropped,
            provenance: m.provenance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(eps: f64, value: f64) -> MicroProfile<f64> {
        let step = 0.01;
        let n = (1.0 / eps / step).round() as usize;
        MicroProfile::new(0.0, step, vec![value; n + 1]).unwrap()
    }

    #[test]
    fn constant_field_windows() {
        let f = CoefficientField::<f64>::constant(1.5).unwrap();
        let p = window_samples(
            &flat(0.05, 0.0),
            &f,
            &MacroModulus::Constant { m: 1.0 },
            0.05,
            2.0,
            10,
        )
        .unwrap();
        assert!(p
            .atoms
            .iter()
            .all(|a| a.coeff_window == p.atoms[0].coeff_window));
        assert!((p.total_weight() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_profile_energy() {
        let f = CoefficientField::<f64>::constant(1.0).unwrap();
        let eps = 0.1;
        let p = window_samples(
            &flat(eps, 0.0),
            &f,
            &MacroModulus::Constant { m: 1.0 },
            eps,
            1.0,
            10,
        )
        .unwrap();
        let e = energy_from_measure(&p).unwrap();
        assert!((e - 100.0).abs() < 1e-9, "{e}");
    }

    #[test]
    fn overflow_dropped() {
        let f = CoefficientField::<f64>::constant(1.0).unwrap();
        let p = window_samples(
            &flat(0.1, 0.0),
            &f,
            &MacroModulus::Constant { m: 1.0 },
            0.1,
            4.0,
            20,
        )
        .unwrap();
        assert!(p.dropped > 0);
        assert!((p.total_weight() - 1.0).abs() < 1e-12);
        assert!(window_samples(
            &flat(0.1, 0.0),
            &f,
            &MacroModulus::Constant { m: 1.0 },
            0.1,
            40.0,
            20
        )
        .is_err());
    }

    #[test]
    fn shift_limits() {
        let f = CoefficientField::<f64>::constant(1.0).unwrap();
        let p = window_samples(
            &flat(0.05, 0.3),
            &f,
            &MacroModulus::Constant { m: 1.0 },
            0.05,
            2.0,
            10,
        )
        .unwrap();
        assert_eq!(invariance_diagnostic(&p, 0.0).unwrap(), 0.0);
        assert_eq!(invariance_diagnostic(&p, 0.5).unwrap(), 0.0);
        assert!(matches!(
            invariance_diagnostic(&p, 0.6),
            Err(HomlabError::Domain(_))
        ));
    }
}
