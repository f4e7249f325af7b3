//! Builds the model described by a configuration.

use crate::config::{ExperimentConfig, IntervalSystem, SftSystem};
use seqlimits_core::error::Result;
use seqlimits_core::funcspace::Grid;
use seqlimits_core::gibbs::{self, GibbsSystem};
use seqlimits_core::limits::InitDescriptor;
use seqlimits_core::maps::{
    IntervalSequence, IntervalStage, MapSequence, PairObservable, SftSequence, SftStage,
};
use seqlimits_core::model::{IntervalModel, Model, SftModel};
use std::sync::Arc;

pub enum System {
    Interval {
        model: Arc<IntervalModel>,
        init: InitDescriptor,
    },
    Sft {
        model: Arc<SftModel>,
    },
}

impl System {
    pub fn model(&self) -> &dyn Model {
        match self {
            System::Interval { model, .. } => model.as_ref(),
            System::Sft { model } => model.as_ref(),
        }
    }

    pub fn init(&self) -> InitDescriptor {
        match self {
            System::Interval { init, .. } => init.clone(),
            System::Sft { .. } => InitDescriptor::Reference,
        }
    }

    pub fn gibbs(&self) -> Option<&GibbsSystem> {
        match self {
            System::Sft { model } => Some(&model.sys),
            _ => None,
        }
    }
}

pub fn interval_sequence(iv: &IntervalSystem) -> Result<IntervalSequence> {
    let family = iv
        .family
        .iter()
        .map(|n| IntervalStage::by_name(n))
        .collect::<Result<Vec<_>>>()?;
    let seq = MapSequence::new(
        family,
        iv.schedule.clone(),
        vec![iv.observable.clone()],
        seqlimits_core::maps::Schedule::Periodic { pattern: vec![0] },
    )?;
    Ok(seq.with_mixing_horizon(iv.mixing_horizon.unwrap_or(1)))
}

pub fn sft_sequence(s: &SftSystem) -> Result<SftSequence> {
    let family = s
        .stages
        .iter()
        .map(|st| {
            SftStage::new(
                &st.name,
                st.adjacency
                    .iter()
                    .map(|r| r.iter().map(|&x| x != 0).collect())
                    .collect(),
                st.potential.clone(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let d_out = family[0].d_out();
    let obs = match (&s.observable.values, &s.observable.table) {
        (Some(v), _) => PairObservable::from_symbols(v, d_out),
        (_, Some(t)) => PairObservable { table: t.clone() },
        _ => unreachable!("validated"),
    };
    for st in &family {
        if obs.table.len() != st.d_in() || obs.table.iter().any(|r| r.len() != st.d_out()) {
            return Err(seqlimits_core::error::Error::Dimension(format!(
                "observable table does not fit stage '{}'",
                st.name
            )));
        }
    }
    let seq = MapSequence::new(
        family,
        s.schedule.clone(),
        vec![obs],
        seqlimits_core::maps::Schedule::Periodic { pattern: vec![0] },
    )?;
    let m = seq.product_positivity_horizon(seq.period().unwrap_or(16).max(1), 64)?;
    Ok(seq.with_mixing_horizon(m.max(1)))
}

pub fn build(cfg: &ExperimentConfig) -> Result<System> {
    if let Some(iv) = &cfg.interval {
        let seq = interval_sequence(iv)?;
        let grid = Grid::new(iv.grid)?;
        let (rho, init) = match &iv.initial_density {
            Some(d) => {
                let st = seq.stage_at(0)?;
                (
                    Some(grid.sample(|x| d.eval(st, x))),
                    InitDescriptor::Density(serde_json::to_string(d).unwrap_or_default()),
                )
            }
            None => (None, InitDescriptor::Reference),
        };
        return Ok(System::Interval {
            model: IntervalModel::new(seq, grid, rho)?,
            init,
        });
    }
    let s = cfg.sft.as_ref().expect("validated");
    let seq = sft_sequence(s)?;
    let top = s.horizon.unwrap_or_else(|| cfg.time_horizon(seq.mixing_horizon)) as i64;
    let sys = gibbs::build(&seq, (0, top), s.burn_in)?;
    Ok(System::Sft {
        model: SftModel::new(sys),
    })
}
