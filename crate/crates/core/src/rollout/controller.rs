use serde::{Deserialize, Serialize};

use crate::biped::{BipedModel, ContactMode, FsmSchedule, FsmState, FullState, Leg};
use crate::error::{Error, Result};
use crate::osc::{osc_solve, OscSolution};
use crate::planner::{
    plan, regularization_targets, swing_foot_trajectory, DesiredOutputs, Gains, OutputKind, PlanInput, PlanSolution,
    PlannerConfig, RegularizationTargets, RetargetOverrides, TrackedOutput,
};
use crate::rom::{com_embedding, RomParams};
use crate::task::Task;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputGains {
    pub kp: f64,
    pub kd: f64,
    pub weight: f64,
}

impl OutputGains {
    fn gains(&self) -> Gains {
        Gains {
            kp: self.kp,
            kd: self.kd,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub planner: PlannerConfig,
    pub com: OutputGains,
    pub swing_foot: OutputGains,
    pub torso: OutputGains,
    pub stance_leg: OutputGains,
    pub swing_leg: OutputGains,
    pub torque_regularization: f64,
    pub swing_apex: f64,
    pub regularization: RegularizationTargets,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            planner: PlannerConfig::default(),
            com: OutputGains {
                kp: 50.0,
                kd: 10.0,
                weight: 10.0,
            },
            swing_foot: OutputGains {
                kp: 200.0,
                kd: 20.0,
                weight: 5.0,
            },
            torso: OutputGains {
                kp: 100.0,
                kd: 10.0,
                weight: 2.0,
            },
            stance_leg: OutputGains {
                kp: 50.0,
                kd: 10.0,
                weight: 0.5,
            },
            swing_leg: OutputGains {
                kp: 50.0,
                kd: 10.0,
                weight: 0.5,
            },
            torque_regularization: 1e-4,
            swing_apex: 0.08,
            regularization: RegularizationTargets::default(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        self.planner.validate()?;
        for (name, g) in [
            ("controller.com", self.com),
            ("controller.swing_foot", self.swing_foot),
            ("controller.torso", self.torso),
            ("controller.stance_leg", self.stance_leg),
            ("controller.swing_leg", self.swing_leg),
        ] {
            if !(g.kp >= 0.0 && g.kd >= 0.0 && g.weight >= 0.0)
                || !(g.kp.is_finite() && g.kd.is_finite() && g.weight.is_finite())
            {
                return Err(Error::config(name, "gains and weight must be finite and non-negative"));
            }
        }
        if !(self.torque_regularization > 0.0 && self.torque_regularization.is_finite()) {
            return Err(Error::config("controller.torque_regularization", "must be positive"));
        }
        if !(self.swing_apex >= 0.0 && self.swing_apex < 0.5) {
            return Err(Error::config("controller.swing_apex", "must be in [0, 0.5)"));
        }
        Ok(())
    }
}

/// Stateful MPC + OSC controller serving one rollout.
pub struct MpcController<'a> {
    params: &'a RomParams,
    model: &'a BipedModel,
    cfg: &'a ControllerConfig,
    schedule: FsmSchedule,
    task: Task,
    targets: RegularizationTargets,
    plan: Option<PlanSolution>,
    /// Ground coordinates of the swing foot at lift-off.
    swing_start: [f64; 2],
}

impl<'a> MpcController<'a> {
    pub fn new(
        params: &'a RomParams,
        model: &'a BipedModel,
        cfg: &'a ControllerConfig,
        schedule: FsmSchedule,
        task: Task,
        overrides: Option<&RetargetOverrides>,
    ) -> Self {
        Self {
            params,
            model,
            cfg,
            schedule,
            task,
            targets: regularization_targets(&task, &cfg.regularization, overrides),
            plan: None,
            swing_start: [0.0, 0.0],
        }
    }

    pub fn set_swing_start(&mut self, world: [f64; 2]) {
        self.swing_start = [self.model.along_ground(world), self.model.height_above_ground(world)];
    }

    pub fn current_plan(&self) -> Option<&PlanSolution> {
        self.plan.as_ref()
    }

    /// Re-plans from the measured state; `t` is walking time.
    pub fn replan(&mut self, x: &FullState, fsm: FsmState, stance_pos: [f64; 2], t: f64) -> Result<()> {
        let y0 = com_embedding(self.model, x, stance_pos);
        let input = PlanInput {
            params: self.params,
            y0,
            stance_pos,
            fsm,
            schedule: self.schedule,
            task: self.task,
            t,
        };
        let sol = plan(&input, &self.cfg.planner, self.plan.as_ref())?;
        self.plan = Some(sol);
        Ok(())
    }

    fn gains_output(kind: OutputKind, g: OutputGains, pos: [f64; 2], vel: [f64; 2], acc: [f64; 2]) -> TrackedOutput {
        TrackedOutput {
            kind,
            pos,
            vel,
            acc,
            gains: g.gains(),
            weight: g.weight,
        }
    }

    /// Desired outputs for single support on `stance` at walking time `t`.
    pub fn outputs(&self, fsm: FsmState, stance: Leg, t: f64) -> Result<DesiredOutputs> {
        let plan = self.plan.as_ref().ok_or(Error::Singular("controller has no plan"))?;
        let m = self.model;
        let com = plan.com_reference(t);
        let swing = stance.other();
        let target = [m.along_ground(plan.next_footstep), 0.0];
        let s = swing_foot_trajectory(
            self.swing_start,
            target,
            self.cfg.swing_apex,
            fsm.phase,
            Some(self.schedule.single_support),
        );
        let world = |v: [f64; 2]| {
            let e = m.ground_tangent();
            let n = m.ground_normal();
            [v[0] * e[0] + v[1] * n[0], v[0] * e[1] + v[1] * n[1]]
        };
        let c = self.cfg;
        let t = &self.targets;
        Ok(DesiredOutputs {
            outputs: vec![
                Self::gains_output(OutputKind::Com, c.com, com.pos, com.vel, com.acc),
                Self::gains_output(
                    OutputKind::Foot(swing),
                    c.swing_foot,
                    world(s.pos),
                    world(s.vel),
                    world(s.acc),
                ),
                Self::gains_output(
                    OutputKind::TorsoPitch,
                    c.torso,
                    [t.torso_pitch, 0.0],
                    [0.0; 2],
                    [0.0; 2],
                ),
                Self::gains_output(
                    OutputKind::LegLength(stance),
                    c.stance_leg,
                    [t.stance_leg_length, 0.0],
                    [0.0; 2],
                    [0.0; 2],
                ),
                Self::gains_output(
                    OutputKind::LegLength(swing),
                    c.swing_leg,
                    [t.swing_leg_length, 0.0],
                    [0.0; 2],
                    [0.0; 2],
                ),
            ],
        })
    }

    pub fn control(&self, x: &FullState, fsm: FsmState, stance: Leg, anchor: [f64; 2], t: f64) -> Result<OscSolution> {
        let outputs = self.outputs(fsm, stance, t)?;
        osc_solve(
            self.model,
            x,
            &outputs,
            &ContactMode::single(stance, anchor),
            self.cfg.torque_regularization,
        )
    }

    /// Double-support hold used while settling: CoM at `com_target`, torso
    /// at its regularization target.
    pub fn hold(&self, x: &FullState, contacts: &ContactMode, com_target: [f64; 2]) -> Result<OscSolution> {
        let c = self.cfg;
        let outputs = DesiredOutputs {
            outputs: vec![
                Self::gains_output(OutputKind::Com, c.com, com_target, [0.0; 2], [0.0; 2]),
                Self::gains_output(
                    OutputKind::TorsoPitch,
                    c.torso,
                    [self.targets.torso_pitch, 0.0],
                    [0.0; 2],
                    [0.0; 2],
                ),
            ],
        };
        osc_solve(self.model, x, &outputs, contacts, c.torque_regularization)
    }
}
