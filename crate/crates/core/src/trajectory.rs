//! Trajectory artifacts: CSV exports of the nodal, cellwise, boundary and
//! energy-ledger fields, a JSON manifest with the config echo, solver
//! statistics and content hashes, and the inverse readers. Floats are
//! written in shortest round-trip decimal form, so a write/read cycle is
//! lossless and reruns are byte-for-byte comparable.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::{LedgerRow, StepStats, Trajectory};
use crate::tensor::SymTensor;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("cannot access trajectory artifact: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed {file}: {reason}")]
    Parse { file: String, reason: String },
    #[error("artifact {0} has been modified (hash mismatch)")]
    HashMismatch(String),
}

pub const NODAL_CSV: &str = "nodal.csv";
pub const CELLWISE_CSV: &str = "cellwise.csv";
pub const BOUNDARY_CSV: &str = "boundary.csv";
pub const ENERGY_CSV: &str = "energy.csv";
pub const MANIFEST_JSON: &str = "manifest.json";

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct StatRecord {
    pub step: usize,
    pub sweeps: usize,
    pub final_decrease: f64,
    pub max_perzyna_residual: f64,
}

/// The run manifest: everything needed to reproduce and verify a run.
#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct RunManifest {
    pub config_toml: String,
    pub dim: usize,
    pub n_vertices: usize,
    pub n_cells: usize,
    pub n_facets: usize,
    pub n_steps: usize,
    pub delta: f64,
    pub eps: f64,
    pub stats: Vec<StatRecord>,
    pub files: Vec<String>,
    /// SHA-256 of each exported CSV, hex-encoded.
    pub hashes: BTreeMap<String, String>,
}

fn tensor_comps(dim: usize) -> &'static [(usize, usize)] {
    if dim == 2 {
        &[(0, 0), (1, 1), (0, 1)]
    } else {
        &[(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]
    }
}

fn comp_names(dim: usize) -> Vec<String> {
    tensor_comps(dim).iter().map(|(i, j)| format!("{}{}", i + 1, j + 1)).collect()
}

pub fn nodal_csv(traj: &Trajectory, dim: usize) -> String {
    let mut out = String::from("step,vertex");
    for a in 0..dim {
        let _ = write!(out, ",u_{a}");
    }
    for a in 0..dim {
        let _ = write!(out, ",v_{a}");
    }
    out.push('\n');
    for step in 0..traj.u.len() {
        let nv = traj.u[step].len() / dim;
        for vtx in 0..nv {
            let _ = write!(out, "{step},{vtx}");
            for a in 0..dim {
                let _ = write!(out, ",{:?}", traj.u[step][vtx * dim + a]);
            }
            for a in 0..dim {
                let _ = write!(out, ",{:?}", traj.v[step][vtx * dim + a]);
            }
            out.push('\n');
        }
    }
    out
}

pub fn cellwise_csv(traj: &Trajectory, dim: usize) -> String {
    let names = comp_names(dim);
    let mut out = String::from("step,cell");
    for field in ["e", "p", "sigma"] {
        for n in &names {
            let _ = write!(out, ",{field}_{n}");
        }
    }
    out.push('\n');
    let comps = tensor_comps(dim);
    for step in 0..traj.e.len() {
        for cell in 0..traj.e[step].len() {
            let _ = write!(out, "{step},{cell}");
            for field in [&traj.e, &traj.p, &traj.sigma] {
                for &(i, j) in comps {
                    let _ = write!(out, ",{:?}", field[step][cell].get(i, j));
                }
            }
            out.push('\n');
        }
    }
    out
}

pub fn boundary_csv(traj: &Trajectory, dim: usize) -> String {
    let mut out = String::from("step,facet");
    for a in 0..dim {
        let _ = write!(out, ",v_{a}");
    }
    for a in 0..dim {
        let _ = write!(out, ",traction_{a}");
    }
    out.push('\n');
    for step in 0..traj.boundary_v.len() {
        for facet in 0..traj.boundary_v[step].len() {
            let _ = write!(out, "{step},{facet}");
            for a in 0..dim {
                let _ = write!(out, ",{:?}", traj.boundary_v[step][facet][a]);
            }
            for a in 0..dim {
                let _ = write!(out, ",{:?}", traj.boundary_traction[step][facet][a]);
            }
            out.push('\n');
        }
    }
    out
}

const ENERGY_COLUMNS: [&str; 10] = [
    "step",
    "time",
    "kinetic",
    "elastic",
    "plastic_increment",
    "boundary_increment",
    "viscous_strain_increment",
    "viscous_plastic_increment",
    "work_f_increment",
    "work_g_increment",
];

pub fn energy_csv(traj: &Trajectory) -> String {
    let mut out = ENERGY_COLUMNS.join(",");
    out.push('\n');
    for r in &traj.ledger {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            r.step,
            r.time,
            r.kinetic,
            r.elastic,
            r.plastic_increment,
            r.boundary_increment,
            r.viscous_strain_increment,
            r.viscous_plastic_increment,
            r.work_f_increment,
            r.work_g_increment
        );
    }
    out
}

fn sha256_hex(data: &str) -> String {
    hex::encode(Sha256::digest(data.as_bytes()))
}

/// Writes all CSVs and the manifest into `dir` (created if absent) and
/// returns the manifest.
pub fn write_outputs(
    traj: &Trajectory,
    dim: usize,
    n_facets: usize,
    config_toml: &str,
    dir: &Path,
) -> Result<RunManifest, TrajectoryError> {
    std::fs::create_dir_all(dir)?;
    let files = [
        (NODAL_CSV, nodal_csv(traj, dim)),
        (CELLWISE_CSV, cellwise_csv(traj, dim)),
        (BOUNDARY_CSV, boundary_csv(traj, dim)),
        (ENERGY_CSV, energy_csv(traj)),
    ];
    let mut hashes = BTreeMap::new();
    for (name, content) in &files {
        std::fs::write(dir.join(name), content)?;
        hashes.insert(name.to_string(), sha256_hex(content));
    }
    let manifest = RunManifest {
        config_toml: config_toml.to_string(),
        dim,
        n_vertices: traj.u[0].len() / dim,
        n_cells: traj.e[0].len(),
        n_facets,
        n_steps: traj.n_steps(),
        delta: traj.delta,
        eps: traj.eps,
        stats: traj
            .stats
            .iter()
            .enumerate()
            .map(|(step, s)| StatRecord {
                step,
                sweeps: s.sweeps,
                final_decrease: s.final_decrease,
                max_perzyna_residual: s.max_perzyna_residual,
            })
            .collect(),
        files: files.iter().map(|(n, _)| n.to_string()).collect(),
        hashes,
    };
    std::fs::write(dir.join(MANIFEST_JSON), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

fn parse_csv(
    name: &str,
    content: &str,
    expected_cols: usize,
) -> Result<Vec<Vec<f64>>, TrajectoryError> {
    let mut rows = Vec::new();
    for (lineno, line) in content.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|t| {
                t.parse().map_err(|_| TrajectoryError::Parse {
                    file: name.into(),
                    reason: format!("bad number '{t}' on line {}", lineno + 1),
                })
            })
            .collect::<Result<_, _>>()?;
        if vals.len() != expected_cols {
            return Err(TrajectoryError::Parse {
                file: name.into(),
                reason: format!("expected {expected_cols} columns on line {}", lineno + 1),
            });
        }
        rows.push(vals);
    }
    Ok(rows)
}

/// Reads a trajectory directory back into memory, verifying content
/// hashes against the manifest.
pub fn read_outputs(dir: &Path) -> Result<(RunManifest, Trajectory), TrajectoryError> {
    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_JSON))?)?;
    for name in &manifest.files {
        let content = std::fs::read_to_string(dir.join(name))?;
        if manifest.hashes.get(name) != Some(&sha256_hex(&content)) {
            return Err(TrajectoryError::HashMismatch(name.clone()));
        }
    }
    let (manifest, traj, _) = read_outputs_tolerant(dir)?;
    Ok((manifest, traj))
}

/// Like [`read_outputs`], but reports files whose content hash disagrees
/// with the manifest instead of failing, so audits can still examine a
/// tampered trajectory.
pub fn read_outputs_tolerant(
    dir: &Path,
) -> Result<(RunManifest, Trajectory, Vec<String>), TrajectoryError> {
    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_JSON))?)?;
    let dim = manifest.dim;
    let n_steps = manifest.n_steps;
    let comps = tensor_comps(dim);

    let mut contents = BTreeMap::new();
    let mut tampered = Vec::new();
    for name in &manifest.files {
        let content = std::fs::read_to_string(dir.join(name))?;
        if manifest.hashes.get(name) != Some(&sha256_hex(&content)) {
            tampered.push(name.clone());
        }
        contents.insert(name.clone(), content);
    }

    let nodal = parse_csv(NODAL_CSV, &contents[NODAL_CSV], 2 + 2 * dim)?;
    let cellwise = parse_csv(CELLWISE_CSV, &contents[CELLWISE_CSV], 2 + 3 * comps.len())?;
    let boundary = parse_csv(BOUNDARY_CSV, &contents[BOUNDARY_CSV], 2 + 2 * dim)?;
    let energy = parse_csv(ENERGY_CSV, &contents[ENERGY_CSV], ENERGY_COLUMNS.len())?;

    let check = |name: &str, got: usize, expect: usize| -> Result<(), TrajectoryError> {
        if got != expect {
            return Err(TrajectoryError::Parse {
                file: name.into(),
                reason: format!("expected {expect} rows, found {got}"),
            });
        }
        Ok(())
    };
    check(NODAL_CSV, nodal.len(), (n_steps + 1) * manifest.n_vertices)?;
    check(CELLWISE_CSV, cellwise.len(), (n_steps + 1) * manifest.n_cells)?;
    check(BOUNDARY_CSV, boundary.len(), (n_steps + 1) * manifest.n_facets)?;
    check(ENERGY_CSV, energy.len(), n_steps + 1)?;

    let mut traj = Trajectory {
        delta: manifest.delta,
        eps: manifest.eps,
        times: (0..=n_steps).map(|i| i as f64 * manifest.delta).collect(),
        u: Vec::new(),
        v: Vec::new(),
        e: Vec::new(),
        p: Vec::new(),
        sigma: Vec::new(),
        boundary_v: Vec::new(),
        boundary_traction: Vec::new(),
        ledger: Vec::new(),
        stats: Vec::new(),
    };
    for step in 0..=n_steps {
        let mut u = DVector::zeros(dim * manifest.n_vertices);
        let mut v = u.clone();
        for row in &nodal[step * manifest.n_vertices..(step + 1) * manifest.n_vertices] {
            let vtx = row[1] as usize;
            for a in 0..dim {
                u[vtx * dim + a] = row[2 + a];
                v[vtx * dim + a] = row[2 + dim + a];
            }
        }
        traj.u.push(u);
        traj.v.push(v);

        let zero = SymTensor::zero(dim);
        let mut e = vec![zero; manifest.n_cells];
        let mut p = e.clone();
        let mut sigma = e.clone();
        for row in &cellwise[step * manifest.n_cells..(step + 1) * manifest.n_cells] {
            let cell = row[1] as usize;
            for (f, field) in [&mut e, &mut p, &mut sigma].into_iter().enumerate() {
                for (k, &(i, j)) in comps.iter().enumerate() {
                    field[cell].set(i, j, row[2 + f * comps.len() + k]);
                }
            }
        }
        traj.e.push(e);
        traj.p.push(p);
        traj.sigma.push(sigma);

        let mut b_v = vec![vec![0.0; dim]; manifest.n_facets];
        let mut b_tr = b_v.clone();
        for row in &boundary[step * manifest.n_facets..(step + 1) * manifest.n_facets] {
            let facet = row[1] as usize;
            for a in 0..dim {
                b_v[facet][a] = row[2 + a];
                b_tr[facet][a] = row[2 + dim + a];
            }
        }
        traj.boundary_v.push(b_v);
        traj.boundary_traction.push(b_tr);

        let r = &energy[step];
        traj.ledger.push(LedgerRow {
            step,
            time: r[1],
            kinetic: r[2],
            elastic: r[3],
            plastic_increment: r[4],
            boundary_increment: r[5],
            viscous_strain_increment: r[6],
            viscous_plastic_increment: r[7],
            work_f_increment: r[8],
            work_g_increment: r[9],
        });
        let s = &manifest.stats[step];
        traj.stats.push(StepStats {
            sweeps: s.sweeps,
            final_decrease: s.final_decrease,
            max_perzyna_residual: s.max_perzyna_residual,
        });
    }
    Ok((manifest, traj, tampered))
}
