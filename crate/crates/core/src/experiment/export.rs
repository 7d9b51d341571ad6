use std::io::Write;

use crate::datagen::UnitTrajectory;
use crate::error::Result;
use crate::metrics::concept_columns;
use crate::models::{Family, Model};
use crate::preprocess;
use crate::scalar::Scalar;

/// Header of an embedding export: unit, cycle, window, RUL, concept labels,
/// latent code and, for CEM, every concept embedding.
pub fn embedding_columns<T: Scalar>(model: &Model<T>) -> Vec<String> {
    let cfg = model.config();
    let mut cols: Vec<String> = ["unit", "cycle", "window", "rul"].iter().map(|s| s.to_string()).collect();
    cols.extend(model.concepts().iter().map(|c| format!("label_{c}")));
    let latent = match cfg.family {
        Family::Cnn | Family::CnnCls | Family::Cem => cfg.latent_dim,
        _ => cfg.bottleneck_width(),
    };
    cols.extend((0..latent).map(|i| format!("z{i}")));
    if cfg.family == Family::Cem {
        for c in model.concepts() {
            cols.extend((0..cfg.embed_dim).map(|d| format!("emb_{c}_{d}")));
        }
    }
    cols
}

/// One row per window of every unit.
pub fn write_embeddings<T: Scalar, W: Write>(out: W, model: &Model<T>, units: &[UnitTrajectory]) -> Result<usize> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(embedding_columns(model))?;
    let mut rows = 0;
    for u in units {
        let ruls = preprocess::rul_targets(u)?;
        let cols = concept_columns(model, u)?;
        let concepts = u.concepts(model.preprocess().tau);
        for detail in model.predict_unit(u)? {
            let q = detail.summary.cycle;
            for (wi, o) in detail.windows.iter().enumerate() {
                let mut rec = vec![u.id(), q.to_string(), (wi + 1).to_string(), ruls[q - 1].to_string()];
                rec.extend(cols.iter().map(|&c| concepts[q - 1][c].to_string()));
                rec.extend(o.latent.iter().map(|v| v.f64().to_string()));
                for e in &o.embeddings {
                    rec.extend(e.iter().map(|v| v.f64().to_string()));
                }
                w.write_record(&rec)?;
                rows += 1;
            }
        }
    }
    w.flush()?;
    Ok(rows)
}

/// Convenience wrapper returning the CSV text.
pub fn export_embeddings<T: Scalar>(model: &Model<T>, units: &[UnitTrajectory]) -> Result<(String, usize)> {
    let mut buf = Vec::new();
    let rows = write_embeddings(&mut buf, model, units)?;
    Ok((String::from_utf8(buf).expect("csv output is UTF-8"), rows))
}
