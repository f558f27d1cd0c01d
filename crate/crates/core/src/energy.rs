//! Sharp-interface evaluation of the rescaled Griffith energy
//!
//! `E_h(y) = h^-2 int 1/2 (d1 y, d2 y / h) : C (d1 y, d2 y / h) + beta int_J |(nu1, nu2 / h)|`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::{cut_cells, CellCut, CrackSet, DisplacementField};
use crate::linalg::{ksum, KahanSum};
use crate::tensor::ElasticTensor;

/// Treatment of cells crossed by the crack.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutCellPolicy {
    /// Split the cell at the crack and borrow the gradient of the uncut
    /// neighbour on each side.
    #[default]
    OneSided,
    /// Drop cut cells from the bulk integral.
    Exclude,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub elastic: f64,
    pub jump: f64,
    pub total: f64,
}

/// Symmetric part of a scaled gradient as `(e11, e22, e12)`.
#[inline]
pub fn sym(g: &[[f64; 2]; 2]) -> (f64, f64, f64) {
    (g[0][0], g[1][1], 0.5 * (g[0][1] + g[1][0]))
}

/// `1/2 G : C G` for the scaled gradient `G`.
#[inline]
pub fn density(c: &ElasticTensor, g: &[[f64; 2]; 2]) -> f64 {
    let (a, b, s) = sym(g);
    0.5 * c.form_sym(a, b, s)
}

/// `int 1/2 G : C G` over the strip (no `h^-2` factor), cell by cell.
pub fn bulk_cell_integrals(
    field: &DisplacementField,
    cuts: &[CellCut],
    c: &ElasticTensor,
    policy: CutCellPolicy,
) -> Vec<f64> {
    let (nx, ny) = (field.nx(), field.ny());
    let mut out = vec![0.0; nx * ny];
    out.par_chunks_mut(nx).enumerate().for_each(|(j, row)| {
        for (i, slot) in row.iter_mut().enumerate() {
            let cut = &cuts[j * nx + i];
            if !cut.is_cut() {
                *slot = density(c, &field.cell_scaled_gradient(i, j)) * field.cell_area(i, j);
                continue;
            }
            if policy == CutCellPolicy::Exclude {
                continue;
            }
            let (dx, dy) = field.cell_size(i, j);
            let donor = |ii: isize, jj: isize| -> f64 {
                if ii < 0 || jj < 0 || ii as usize >= nx || jj as usize >= ny {
                    return 0.0;
                }
                let (ii, jj) = (ii as usize, jj as usize);
                if cuts[jj * nx + ii].is_cut() {
                    0.0
                } else {
                    density(c, &field.cell_scaled_gradient(ii, jj))
                }
            };
            let (ii, jj) = (i as isize, j as isize);
            *slot = if cut.vertical() {
                let xc = cut.cx.clamp(field.xs[i], field.xs[i + 1]);
                let wl = (xc - field.xs[i]) * dy;
                let wr = (field.xs[i + 1] - xc) * dy;
                wl * donor(ii - 1, jj) + wr * donor(ii + 1, jj)
            } else {
                let yc = cut.cy.clamp(field.ys[j], field.ys[j + 1]);
                let wb = (yc - field.ys[j]) * dx;
                let wt = (field.ys[j + 1] - yc) * dx;
                wb * donor(ii, jj - 1) + wt * donor(ii, jj + 1)
            };
        }
    });
    out
}

/// Order-independent sum of row-major cell values.
pub fn sum_cells(v: &[f64]) -> f64 {
    v.iter().copied().collect::<KahanSum>().value()
}

pub fn evaluate_eh(
    field: &DisplacementField,
    crack: &CrackSet,
    c: &ElasticTensor,
    beta: f64,
) -> Result<EnergyBreakdown> {
    evaluate_eh_with(field, crack, c, beta, CutCellPolicy::OneSided)
}

pub fn evaluate_eh_with(
    field: &DisplacementField,
    crack: &CrackSet,
    c: &ElasticTensor,
    beta: f64,
    policy: CutCellPolicy,
) -> Result<EnergyBreakdown> {
    field.validate()?;
    crack.validate(field.l)?;
    let cuts = cut_cells(field, crack);
    let bulk = sum_cells(&bulk_cell_integrals(field, &cuts, c, policy));
    let elastic = bulk / (field.h * field.h);
    let jump = beta * crack.anisotropic_measure(field.h);
    Ok(EnergyBreakdown {
        elastic,
        jump,
        total: elastic + jump,
    })
}

/// Converts rescaled energies to the thin-domain form: the strain integral
/// `int_{Omega_h} e w : C e w dx` equals `2 h^3` times the rescaled elastic
/// energy, and the physical crack length is `h` times the anisotropic measure.
pub fn unrescaled(e: &EnergyBreakdown, h: f64, beta: f64) -> (f64, f64) {
    (2.0 * h.powi(3) * e.elastic, if beta > 0.0 { h * e.jump / beta } else { 0.0 })
}

/// Adds the infinitesimal rigid motion `A (x1, h x2) + b` to a field.
pub fn add_rigid(field: &DisplacementField, a: f64, b: [f64; 2]) -> DisplacementField {
    let mut out = field.clone();
    let w = field.xs.len();
    for (k, v) in out.values.iter_mut().enumerate() {
        let (x1, x2) = (field.xs[k % w], field.ys[k / w] * field.h);
        v[0] += -a * x2 + b[0];
        v[1] += a * x1 + b[1];
    }
    out
}

/// Total bulk energy restricted to cells where `mask` is true.
pub fn masked_bulk(field: &DisplacementField, c: &ElasticTensor, mask: &[bool]) -> f64 {
    let nx = field.nx();
    ksum((0..field.ny()).flat_map(|j| (0..nx).map(move |i| (i, j))).map(|(i, j)| {
        if mask[j * nx + i] {
            density(c, &field.cell_scaled_gradient(i, j)) * field.cell_area(i, j)
        } else {
            0.0
        }
    })) / (field.h * field.h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::isotropic_tensor;
    use proptest::prelude::*;

    #[test]
    fn rigid_motion_has_zero_energy() {
        let c = isotropic_tensor(1.0, 1.0).unwrap();
        let h = 0.1;
        let f = DisplacementField::uniform(2.0, h, 20, 8, |_, _| [0.0; 2]).unwrap();
        let f = add_rigid(&f, 0.7, [1.0, -2.0]);
        let e = evaluate_eh(&f, &CrackSet::empty(), &c, 1.0).unwrap();
        assert!(e.elastic.abs() < 1e-12, "{}", e.elastic);
    }

    #[test]
    fn crack_measures() {
        let c = isotropic_tensor(1.0, 0.0).unwrap();
        let f = DisplacementField::uniform(1.0, 0.05, 10, 4, |_, _| [0.0; 2]).unwrap();
        let e = evaluate_eh(&f, &CrackSet::full_vertical(&[0.55]), &c, 2.0).unwrap();
        assert!((e.jump - 2.0).abs() < 1e-15);
        let mut cs = CrackSet::empty();
        cs.push(CrackSet::horizontal(0.1, 0.2, 0.5));
        let e = evaluate_eh(&f, &cs, &c, 1.0).unwrap();
        assert!((e.jump - 0.3 / 0.05).abs() < 1e-12);
    }

    #[test]
    fn two_rigid_pieces_across_crack() {
        let c = isotropic_tensor(1.0, 1.0).unwrap();
        let h = 0.2;
        let f = DisplacementField::uniform(1.0, h, 20, 6, |x, y| {
            if x < 0.525 {
                [0.0, 0.0]
            } else {
                [-0.3 * h * y + 1.0, 0.3 * x - 2.0]
            }
        })
        .unwrap();
        let crack = CrackSet::full_vertical(&[0.525]);
        let one = evaluate_eh_with(&f, &crack, &c, 1.0, CutCellPolicy::OneSided).unwrap();
        let ex = evaluate_eh_with(&f, &crack, &c, 1.0, CutCellPolicy::Exclude).unwrap();
        assert!(one.elastic.abs() < 1e-12 && ex.elastic.abs() < 1e-12);
        // without the crack the jump is smeared into huge strain
        let no = evaluate_eh(&f, &CrackSet::empty(), &c, 1.0).unwrap();
        assert!(no.elastic > 1.0);
    }

    #[test]
    fn quadrature_converges_for_smooth_fields() {
        let c = isotropic_tensor(1.0, 0.5).unwrap();
        let h = 0.5;
        let f = |n: usize| {
            let fld = DisplacementField::uniform(1.0, h, n, n, |x, y| [(2.0 * x).sin() * y, (x * y).cos()]).unwrap();
            evaluate_eh(&fld, &CrackSet::empty(), &c, 1.0).unwrap().elastic
        };
        let (e1, e2, e3) = (f(16), f(32), f(64));
        let rate = ((e1 - e2).abs() / (e2 - e3).abs()).log2();
        assert!(rate >= 1.8, "rate {rate}");
    }

    proptest! {
        #[test]
        fn frame_invariance(a in -3.0..3.0f64, b0 in -3.0..3.0f64, b1 in -3.0..3.0f64) {
            let c = isotropic_tensor(1.0, 1.0).unwrap();
            let f = DisplacementField::uniform(1.0, 0.25, 12, 6, |x, y| [x * x * y, (3.0 * x).sin()]).unwrap();
            let crack = CrackSet::full_vertical(&[0.46]);
            let e0 = evaluate_eh(&f, &crack, &c, 1.0).unwrap().elastic;
            let e1 = evaluate_eh(&add_rigid(&f, a, [b0, b1]), &crack, &c, 1.0).unwrap().elastic;
            prop_assert!((e0 - e1).abs() <= 1e-10 * e0.abs().max(1e-300) + 1e-12);
        }
    }
}
