//! Model checkpoints as tensor-record archives.
//!
//! The first record is empty and carries the geometry, head width, epoch
//! and regularizer settings as metadata. Every learnable tensor follows as
//! an f64 record tagged with its name.

use std::sync::Arc;

use super::model::FafeModel;
use crate::container::{Payload, TensorRecord};
use crate::curvelet::CurveletGeometry;
use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::regularizer::{L1Schedule, RegConfig};

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: FafeModel,
    pub reg: RegConfig,
    pub epoch: usize,
}

fn mismatch(msg: impl Into<String>) -> Error {
    Error::Container(format!("checkpoint mismatch: {}", msg.into()))
}

pub fn to_records(ck: &Checkpoint) -> Result<Vec<TensorRecord>> {
    let g = ck.model.geometry();
    let r = &ck.reg;
    let mut header = TensorRecord::new(vec![0], Payload::F64(Vec::new()))?
        .with("kind", "checkpoint")
        .with("height", g.height())
        .with("width", g.width())
        .with("scales", g.num_scales())
        .with("angles", g.angles_at_scale2())
        .with("hidden", ck.model.enhancer.se.hidden())
        .with("epoch", ck.epoch)
        .with("l_min", r.l_min)
        .with("l_max", r.l_max)
        .with("lambda_max", r.lambda_max)
        .with("lambda_cls", r.lambda_cls)
        .with("m_total", r.m_total);
    header = match r.schedule {
        L1Schedule::Stepped { base, increment, every } => header
            .with("l1_base", base)
            .with("l1_increment", increment)
            .with("l1_every", every),
        L1Schedule::Constant(v) => header.with("l1_constant", v),
    };
    let mut out = vec![header];
    let mut err = None;
    ck.model.visit(
        &mut |name, shape, v| match TensorRecord::new(shape.to_vec(), Payload::F64(v.to_vec())) {
            Ok(rec) => out.push(rec.with("name", name)),
            Err(e) => err = Some(e),
        },
    );
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

pub fn from_records(records: &[TensorRecord]) -> Result<Checkpoint> {
    let header = records.first().ok_or_else(|| mismatch("archive is empty"))?;
    if header.get("kind") != Some("checkpoint") {
        return Err(mismatch("first record is not a checkpoint header"));
    }
    let geometry = Arc::new(CurveletGeometry::new(
        header.parse("height")?,
        header.parse("width")?,
        header.parse("scales")?,
        header.parse("angles")?,
    )?);
    let schedule = if header.get("l1_constant").is_some() {
        L1Schedule::Constant(header.parse("l1_constant")?)
    } else {
        L1Schedule::Stepped {
            base: header.parse("l1_base")?,
            increment: header.parse("l1_increment")?,
            every: header.parse("l1_every")?,
        }
    };
    let reg = RegConfig {
        l_min: header.parse("l_min")?,
        l_max: header.parse("l_max")?,
        lambda_max: header.parse("lambda_max")?,
        lambda_cls: header.parse("lambda_cls")?,
        schedule,
        m_total: header.parse("m_total")?,
    };
    let mut model = FafeModel::init(geometry, header.parse("hidden")?, 0)?;
    let tensors = &records[1..];
    let mut idx = 0;
    let mut err: Option<Error> = None;
    let mut expected = Vec::new();
    model.visit(&mut |name, shape, _| expected.push((name.to_string(), shape.to_vec())));
    if tensors.len() != expected.len() {
        return Err(mismatch(format!(
            "{} tensors, expected {}",
            tensors.len(),
            expected.len()
        )));
    }
    model.visit_mut(&mut |name, v| {
        if err.is_some() {
            return;
        }
        let rec = &tensors[idx];
        let (_, shape) = &expected[idx];
        idx += 1;
        if rec.get("name") != Some(name) || &rec.dims != shape {
            err = Some(mismatch(format!("tensor {name} missing or reshaped")));
            return;
        }
        match &rec.payload {
            Payload::F64(p) => v.copy_from_slice(p),
            _ => err = Some(mismatch(format!("tensor {name} is not f64"))),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(Checkpoint {
        model,
        reg,
        epoch: header.parse("epoch")?,
    })
}
