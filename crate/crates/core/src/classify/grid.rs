//! Inner cross-validated grid search over linear and RBF SVMs.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::{check_rows, dot, sq_dist, train_with_gram, Kernel, SmoParams, SvmModel};
use crate::error::{Error, Result};
use crate::types::Label;

pub const GRID_GAMMA: [f64; 2] = [1e-3, 1e-4];
pub const GRID_C: [f64; 7] = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
pub const INNER_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub kernel: Kernel,
    pub c: f64,
}

/// The 21 cells in tie-break order: linear by increasing C, then RBF by
/// increasing C and, within a C, decreasing gamma.
pub fn grid_cells() -> Vec<GridCell> {
    let mut cells: Vec<GridCell> = GRID_C
        .iter()
        .map(|&c| GridCell {
            kernel: Kernel::Linear,
            c,
        })
        .collect();
    for &c in &GRID_C {
        for &gamma in &GRID_GAMMA {
            cells.push(GridCell {
                kernel: Kernel::Rbf { gamma },
                c,
            });
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: GridCell,
    pub fold_accuracies: Vec<f64>,
    pub mean_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchReport {
    pub cells: Vec<CellResult>,
    /// Index into `cells`.
    pub chosen: usize,
    pub folds: usize,
}

impl GridSearchReport {
    pub fn chosen_cell(&self) -> GridCell {
        self.cells[self.chosen].cell
    }
}

/// Grid search with every row its own fold unit.
pub fn train_optimized<R: Rng + ?Sized>(
    x: &[Vec<f64>],
    y: &[Label],
    rng: &mut R,
) -> Result<(SvmModel, GridSearchReport)> {
    let groups: Vec<usize> = (0..x.len()).collect();
    train_optimized_grouped(x, y, &groups, rng)
}

/// Grid search where rows sharing a group id (e.g. augmented copies of one
/// slide) always land in the same inner fold. Folds are stratified by class
/// over groups; with fewer than 5 groups in a class the fold count drops to
/// that count, and below 2 the search fails.
pub fn train_optimized_grouped<R: Rng + ?Sized>(
    x: &[Vec<f64>],
    y: &[Label],
    groups: &[usize],
    rng: &mut R,
) -> Result<(SvmModel, GridSearchReport)> {
    let dim = check_rows(x, y)?;
    if groups.len() != x.len() {
        return Err(Error::Dimension(format!("{} rows but {} group ids", x.len(), groups.len())));
    }

    let mut class_groups: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut group_label: Vec<(usize, Label)> = Vec::new();
    for (&g, &l) in groups.iter().zip(y) {
        match group_label.iter().find(|(id, _)| *id == g) {
            Some((_, existing)) if *existing != l => {
                return Err(Error::Data(format!("group {g} mixes both labels")));
            }
            Some(_) => {}
            None => {
                group_label.push((g, l));
                class_groups[l.to_byte() as usize].push(g);
            }
        }
    }
    let minority = class_groups[0].len().min(class_groups[1].len());
    let folds = INNER_FOLDS.min(minority);
    if folds < 2 {
        return Err(Error::Size(format!(
            "inner cross-validation needs at least 2 samples per class, smallest class has {minority}"
        )));
    }
    let mut fold_of_group = std::collections::HashMap::new();
    for members in class_groups.iter_mut() {
        members.shuffle(rng);
        for (pos, &g) in members.iter().enumerate() {
            fold_of_group.insert(g, pos % folds);
        }
    }
    let fold_of_row: Vec<usize> = groups.iter().map(|g| fold_of_group[g]).collect();

    let n = x.len();
    let mut dots = vec![0.0; n * n];
    let mut dists = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let (d, s) = (dot(&x[i], &x[j]), sq_dist(&x[i], &x[j]));
            dots[i * n + j] = d;
            dots[j * n + i] = d;
            dists[i * n + j] = s;
            dists[j * n + i] = s;
        }
    }
    let gram_entry = |kernel: Kernel, i: usize, j: usize| match kernel {
        Kernel::Linear => dots[i * n + j],
        Kernel::Rbf { gamma } => (-gamma * dists[i * n + j]).exp(),
    };
    let params = SmoParams::default();

    let cells = grid_cells()
        .into_par_iter()
        .map(|cell| {
            let fold_accuracies = (0..folds)
                .map(|f| {
                    let train: Vec<usize> = (0..n).filter(|&i| fold_of_row[i] != f).collect();
                    let test: Vec<usize> = (0..n).filter(|&i| fold_of_row[i] == f).collect();
                    let gram: Vec<f64> = train
                        .iter()
                        .flat_map(|&i| train.iter().map(move |&j| (i, j)))
                        .map(|(i, j)| gram_entry(cell.kernel, i, j))
                        .collect();
                    let tx: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
                    let ty: Vec<Label> = train.iter().map(|&i| y[i]).collect();
                    let (model, _) = train_with_gram(&tx, &ty, &gram, cell.kernel, cell.c, dim, &params)?;
                    let correct = test
                        .iter()
                        .map(|&i| model.predict(&x[i]).map(|(l, _)| l == y[i]))
                        .collect::<Result<Vec<bool>>>()?
                        .into_iter()
                        .filter(|&ok| ok)
                        .count();
                    Ok(correct as f64 / test.len() as f64)
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean_acc = fold_accuracies.iter().sum::<f64>() / folds as f64;
            Ok(CellResult {
                cell,
                fold_accuracies,
                mean_acc,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut chosen = 0;
    for (i, c) in cells.iter().enumerate() {
        if c.mean_acc > cells[chosen].mean_acc {
            chosen = i;
        }
    }
    let best = cells[chosen].cell;
    let gram: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| gram_entry(best.kernel, i, j))
        .collect();
    let (model, _) = train_with_gram(x, y, &gram, best.kernel, best.c, dim, &params)?;
    Ok((model, GridSearchReport { cells, chosen, folds }))
}

/// CSV `kernel,gamma,C,mean_acc,chosen`; gamma is empty for linear cells.
pub fn write_grid_report<W: Write>(out: W, report: &GridSearchReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kernel", "gamma", "C", "mean_acc", "chosen"])?;
    for (i, c) in report.cells.iter().enumerate() {
        w.write_record([
            c.cell.kernel.name().to_owned(),
            c.cell.kernel.gamma().map(|g| g.to_string()).unwrap_or_default(),
            c.cell.c.to_string(),
            c.mean_acc.to_string(),
            (i == report.chosen).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn separable(n_per_class: usize) -> (Vec<Vec<f64>>, Vec<Label>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n_per_class {
            let t = i as f64 / n_per_class as f64;
            x.push(vec![0.9 - 0.1 * t, 0.1 + 0.1 * t]);
            y.push(Label::Pc);
            x.push(vec![0.1 + 0.1 * t, 0.9 - 0.1 * t]);
            y.push(Label::Fn);
        }
        (x, y)
    }

    #[test]
    fn grid_has_21_cells_in_tie_break_order() {
        let cells = grid_cells();
        assert_eq!(cells.len(), 21);
        assert_eq!(cells.iter().filter(|c| c.kernel == Kernel::Linear).count(), 7);
        assert_eq!(cells[0], GridCell { kernel: Kernel::Linear, c: 0.5 });
        assert_eq!(cells[7], GridCell { kernel: Kernel::Rbf { gamma: 1e-3 }, c: 0.5 });
        assert_eq!(cells[8], GridCell { kernel: Kernel::Rbf { gamma: 1e-4 }, c: 0.5 });
    }

    #[test]
    fn separable_data_picks_first_linear_cell() {
        let (x, y) = separable(10);
        let (model, report) = train_optimized(&x, &y, &mut seeded(1)).unwrap();
        assert_eq!(report.cells.len(), 21);
        assert_eq!(report.folds, 5);
        assert_eq!(report.chosen_cell(), GridCell { kernel: Kernel::Linear, c: 0.5 });
        assert_eq!(model.accuracy(&x, &y).unwrap(), 1.0);
        for c in &report.cells {
            assert!((0.0..=1.0).contains(&c.mean_acc));
            let mean = c.fold_accuracies.iter().sum::<f64>() / c.fold_accuracies.len() as f64;
            assert!((mean - c.mean_acc).abs() <= 1e-12);
        }
    }

    #[test]
    fn folds_shrink_with_small_classes() {
        let (x, y) = separable(3);
        let (_, report) = train_optimized(&x, &y, &mut seeded(2)).unwrap();
        assert_eq!(report.folds, 3);
        let (x, y) = separable(1);
        assert!(matches!(train_optimized(&x, &y, &mut seeded(2)), Err(Error::Size(_))));
    }

    #[test]
    fn report_is_reproducible() {
        let (x, y) = separable(8);
        let a = train_optimized(&x, &y, &mut seeded(3)).unwrap();
        let b = train_optimized(&x, &y, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
        let mut csv = Vec::new();
        write_grid_report(&mut csv, &a.1).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 22);
        assert!(text.lines().nth(1).unwrap().starts_with("linear,,0.5,1,true"));
    }

    #[test]
    fn groups_stay_together() {
        let (x, y) = separable(6);
        // Two rows per group.
        let groups: Vec<usize> = (0..x.len()).map(|i| (i / 4) * 2 + i % 2).collect();
        let (_, report) = train_optimized_grouped(&x, &y, &groups, &mut seeded(5)).unwrap();
        assert_eq!(report.folds, 3);
    }
}
