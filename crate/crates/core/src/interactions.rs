//! Question-to-visual and bridged visual-to-visual interactions.

use bta_tensor::{Scalar, Tensor, TensorData};
use rand::Rng;

use crate::config::{Ablation, ModelConfig};
use crate::error::{Result, StageExt};
use crate::graph::{self, DependencyEdge, GraphBundle};
use crate::layers::{Activation, GcnStack, Linear, SelfLoops};
use crate::params::{Bound, ParamStore};

/// `softmax_rows(λ X Uᵀ)`: how strongly each node of `x` attends to each
/// row of `u`.
pub fn interaction_matrix<T: Scalar>(x: &Tensor<T>, u: &Tensor<T>, lambda: f64) -> Result<Tensor<T>> {
    Ok(x.matmul(&u.t()?)?.softmax_rows(lambda)?)
}

/// Question-conditioned visual nodes and the interaction matrix used.
pub struct Conditioned<T: Scalar> {
    pub nodes: Tensor<T>,
    pub interaction: Tensor<T>,
}

/// Aggregates question nodes into visual nodes, then propagates over the
/// visual graph: `GCN(W, fc(X + S U))` with `S = softmax_rows(λ X Uᵀ)`.
pub fn q2v_interaction<T: Scalar>(
    p: &Bound<'_, T>,
    nodes: &Tensor<T>,
    u: &Tensor<T>,
    weight_matrix: &Tensor<T>,
    fc: &Linear,
    gcn: &GcnStack,
    lambda: f64,
) -> Result<Conditioned<T>> {
    let s = interaction_matrix(nodes, u, lambda)?;
    let x = fc.forward(p, &nodes.add(&s.matmul(u)?)?)?;
    Ok(Conditioned {
        nodes: gcn.forward(p, weight_matrix, &x, SelfLoops::Add)?,
        interaction: s,
    })
}

/// Question nodes enriched with one visual stream.
pub struct Bridge<T: Scalar> {
    /// `softmax_rows(λ U Xᵀ)`, `K×n`.
    pub attention: Tensor<T>,
    /// `U_b`, the attended visual nodes per question node.
    pub aggregated: Tensor<T>,
    /// `Û_b = U + GCN(W_q, U_b)`.
    pub refined: Tensor<T>,
}

pub fn bridge_aggregate<T: Scalar>(
    p: &Bound<'_, T>,
    u: &Tensor<T>,
    conditioned: &Tensor<T>,
    w_q: &Tensor<T>,
    gcn: &GcnStack,
    loops: SelfLoops,
    lambda: f64,
) -> Result<Bridge<T>> {
    let attention = interaction_matrix(u, conditioned, lambda)?;
    let aggregated = attention.matmul(conditioned)?;
    let refined = u.add(&gcn.forward(p, w_q, &aggregated, loops)?)?;
    Ok(Bridge {
        attention,
        aggregated,
        refined,
    })
}

/// Delivered nodes and the interaction matrix used.
pub struct Delivered<T: Scalar> {
    pub nodes: Tensor<T>,
    pub interaction: Tensor<T>,
}

/// `fc(X̃ + S_b Û_b)` with `S_b = softmax_rows(λ X̃ Û_bᵀ)`.
pub fn v2v_deliver<T: Scalar>(
    p: &Bound<'_, T>,
    conditioned: &Tensor<T>,
    refined: &Tensor<T>,
    fc: &Linear,
    lambda: f64,
) -> Result<Delivered<T>> {
    let s = interaction_matrix(conditioned, refined, lambda)?;
    Ok(Delivered {
        nodes: fc.forward(p, &conditioned.add(&s.matmul(refined)?)?)?,
        interaction: s,
    })
}

/// Direct visual-to-visual delivery without the question graph:
/// `fc(X̃ + S Ỹ)` with `S = softmax_rows(λ X̃ Ỹᵀ)`.
pub fn v2v_no_bridge<T: Scalar>(
    p: &Bound<'_, T>,
    target: &Tensor<T>,
    source: &Tensor<T>,
    fc: &Linear,
    lambda: f64,
) -> Result<Delivered<T>> {
    v2v_deliver(p, target, source, fc, lambda)
}

/// Interaction matrices captured during one pass. Matrices of switched-off
/// components are `None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InteractionTrace<T> {
    /// Appearance-to-question, `L×K`.
    pub s_v: Option<TensorData<T>>,
    /// Motion-to-question, `N×K`.
    pub s_m: Option<TensorData<T>>,
    /// Appearance-to-bridged-question, `L×K`.
    pub s_b_v: Option<TensorData<T>>,
    /// Motion-to-bridged-question, `N×K`.
    pub s_b_m: Option<TensorData<T>>,
    /// Question-to-motion bridge attention, `K×N`.
    pub bridge_m: Option<TensorData<T>>,
    /// Question-to-appearance bridge attention, `K×L`.
    pub bridge_v: Option<TensorData<T>>,
    /// Appearance-to-motion direct affinity, `L×N`.
    pub s_wob_v: Option<TensorData<T>>,
    /// Motion-to-appearance direct affinity, `N×L`.
    pub s_wob_m: Option<TensorData<T>>,
}

impl<T: Scalar> InteractionTrace<T> {
    /// Present matrices with their conventional names.
    pub fn matrices(&self) -> Vec<(&'static str, &TensorData<T>)> {
        [
            ("S_v", &self.s_v),
            ("S_m", &self.s_m),
            ("S_b_v", &self.s_b_v),
            ("S_b_m", &self.s_b_m),
            ("bridge_m", &self.bridge_m),
            ("bridge_v", &self.bridge_v),
            ("S_wob_v", &self.s_wob_v),
            ("S_wob_m", &self.s_wob_m),
        ]
        .into_iter()
        .filter_map(|(n, m)| m.as_ref().map(|m| (n, m)))
        .collect()
    }
}

/// Every intermediate node set of one pass.
pub struct ConditionedVisuals<T: Scalar> {
    pub v_hat: Option<Tensor<T>>,
    pub m_hat: Option<Tensor<T>>,
    pub v_tilde: Option<Tensor<T>>,
    pub m_tilde: Option<Tensor<T>>,
    pub u_b_m: Option<Tensor<T>>,
    pub u_b_v: Option<Tensor<T>>,
    pub u_hat_b_m: Option<Tensor<T>>,
    pub u_hat_b_v: Option<Tensor<T>>,
    pub v_f: Option<Tensor<T>>,
    pub m_f: Option<Tensor<T>>,
}

/// Output of the visual pipeline for one question.
pub struct PipelineOutput<T: Scalar> {
    pub visuals: ConditionedVisuals<T>,
    pub graphs: GraphBundle<T>,
    pub trace: InteractionTrace<T>,
}

/// Inputs of one pass: raw features and the encoded question.
pub struct PassInput<'a, T: Scalar> {
    pub appearance: &'a TensorData<T>,
    pub motion: &'a TensorData<T>,
    pub u: &'a Tensor<T>,
    pub edges: &'a [DependencyEdge],
}

/// Layers from raw visual features to the final appearance and motion
/// nodes.
#[derive(Debug, Clone)]
pub struct VisualPipeline {
    pub project_v: Linear,
    pub project_m: Linear,
    pub fc_q2a: Linear,
    pub fc_q2m: Linear,
    pub gcn_v: GcnStack,
    pub gcn_m: GcnStack,
    /// Question graph convolution over motion-attended question nodes.
    pub bridge_gcn_m: GcnStack,
    /// Question graph convolution over appearance-attended question nodes.
    pub bridge_gcn_v: GcnStack,
    /// Delivery into appearance nodes.
    pub deliver_v: Linear,
    /// Delivery into motion nodes.
    pub deliver_m: Linear,
    /// Output projection when appearance receives nothing from motion.
    pub out_v: Option<Linear>,
    pub out_m: Option<Linear>,
    pub wob_v: Option<Linear>,
    pub wob_m: Option<Linear>,
    pub lambda: f64,
    pub question_loops: SelfLoops,
    pub ablation: Ablation,
}

impl VisualPipeline {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let (d_in, d, d_f) = (config.feature_dim, config.d_model, config.fused_dim());
        let ab = config.ablation;
        let gcn_dims = vec![d; config.gcn_layers + 1];
        let project_v = Linear::new(store, "p^v", d_in, d, Activation::Identity, rng)?;
        let project_m = Linear::new(store, "p^m", d_in, d, Activation::Identity, rng)?;
        let fc_q2a = Linear::new(store, "f^v", d, d, Activation::Relu, rng)?;
        let gcn_v = GcnStack::new(store, "g^v", &gcn_dims, rng)?;
        let fc_q2m = Linear::new(store, "f^m", d, d, Activation::Relu, rng)?;
        let gcn_m = GcnStack::new(store, "g^m", &gcn_dims, rng)?;
        let bridge_gcn_m = GcnStack::new(store, "gb^m", &gcn_dims, rng)?;
        let deliver_v = Linear::new(store, "b^v", d, d_f, Activation::Relu, rng)?;
        let bridge_gcn_v = GcnStack::new(store, "gb^v", &gcn_dims, rng)?;
        let deliver_m = Linear::new(store, "b^m", d, d_f, Activation::Relu, rng)?;
        let mut optional = |needed: bool, name: &str| -> Result<Option<Linear>> {
            needed
                .then(|| Linear::new(store, name, d, d_f, Activation::Relu, rng))
                .transpose()
        };
        let out_v = optional(ab.appearance() && !ab.m2a(), "o^v")?;
        let out_m = optional(ab.motion() && !ab.a2m(), "o^m")?;
        let wob_v = optional(ab.no_bridge && ab.m2a(), "wob^v")?;
        let wob_m = optional(ab.no_bridge && ab.a2m(), "wob^m")?;
        Ok(Self {
            project_v,
            project_m,
            fc_q2a,
            fc_q2m,
            gcn_v,
            gcn_m,
            bridge_gcn_m,
            bridge_gcn_v,
            deliver_v,
            deliver_m,
            out_v,
            out_m,
            wob_v,
            wob_m,
            lambda: config.lambda,
            question_loops: if config.question_self_loops {
                SelfLoops::Add
            } else {
                SelfLoops::Existing
            },
            ablation: ab,
        })
    }

    /// Runs graph construction, Q2A/Q2M and the visual-to-visual stage.
    pub fn forward<T: Scalar>(&self, p: &Bound<'_, T>, input: &PassInput<'_, T>) -> Result<PipelineOutput<T>> {
        let ab = self.ablation;
        let lambda = self.lambda;
        let u = input.u;
        let (k, _) = u.dims2()?;
        let mut trace = InteractionTrace::default();

        let a_q = graph::adjacency_from_dependencies::<T>(input.edges, k).stage("question graph")?;
        let e_q = graph::question_affinity(u, lambda).stage("question graph")?;
        let w_q = graph::question_graph(u, &a_q, lambda).stage("question graph")?;

        let stream = |active: bool,
                          features: &TensorData<T>,
                          project: &Linear,
                          conditioned: bool,
                          fc: &Linear,
                          gcn: &GcnStack,
                          stage: &'static str|
         -> Result<Stream<T>> {
            if !active {
                return Ok(None);
            }
            let hat = project.forward(p, &Tensor::constant(features)).stage(stage)?;
            let w = graph::visual_edge_weights(&hat, lambda).stage(stage)?;
            if conditioned {
                let c = q2v_interaction(p, &hat, u, &w, fc, gcn, lambda).stage(stage)?;
                Ok(Some((hat, w, c.nodes, Some(c.interaction))))
            } else {
                Ok(Some((hat.clone(), w, hat, None)))
            }
        };
        let appearance = stream(
            ab.appearance(),
            input.appearance,
            &self.project_v,
            ab.q2a(),
            &self.fc_q2a,
            &self.gcn_v,
            "appearance interaction",
        )?;
        let motion = stream(
            ab.motion(),
            input.motion,
            &self.project_m,
            ab.q2m(),
            &self.fc_q2m,
            &self.gcn_m,
            "motion interaction",
        )?;
        let (v_hat, w_v, v_tilde, s_v) = split(appearance);
        let (m_hat, w_m, m_tilde, s_m) = split(motion);
        trace.s_v = s_v.map(|s| s.to_data());
        trace.s_m = s_m.map(|s| s.to_data());

        let mut visuals = ConditionedVisuals {
            v_hat,
            m_hat,
            v_tilde: v_tilde.clone(),
            m_tilde: m_tilde.clone(),
            u_b_m: None,
            u_b_v: None,
            u_hat_b_m: None,
            u_hat_b_v: None,
            v_f: None,
            m_f: None,
        };

        if let Some(vt) = &v_tilde {
            visuals.v_f = Some(match (&m_tilde, ab.m2a()) {
                (Some(mt), true) if ab.no_bridge => {
                    let fc = self.wob_v.as_ref().expect("created for the bridge-free ablation");
                    let d = v2v_no_bridge(p, vt, mt, fc, lambda).stage("motion to appearance")?;
                    trace.s_wob_v = Some(d.interaction.to_data());
                    d.nodes
                }
                (Some(mt), true) => {
                    let b = bridge_aggregate(p, u, mt, &w_q, &self.bridge_gcn_m, self.question_loops, lambda)
                        .stage("motion to appearance")?;
                    let d = v2v_deliver(p, vt, &b.refined, &self.deliver_v, lambda).stage("motion to appearance")?;
                    trace.bridge_m = Some(b.attention.to_data());
                    trace.s_b_v = Some(d.interaction.to_data());
                    visuals.u_b_m = Some(b.aggregated);
                    visuals.u_hat_b_m = Some(b.refined);
                    d.nodes
                }
                _ => {
                    let fc = self.out_v.as_ref().expect("created when appearance has no motion input");
                    fc.forward(p, vt).stage("appearance output")?
                }
            });
        }
        if let Some(mt) = &m_tilde {
            visuals.m_f = Some(match (&v_tilde, ab.a2m()) {
                (Some(vt), true) if ab.no_bridge => {
                    let fc = self.wob_m.as_ref().expect("created for the bridge-free ablation");
                    let d = v2v_no_bridge(p, mt, vt, fc, lambda).stage("appearance to motion")?;
                    trace.s_wob_m = Some(d.interaction.to_data());
                    d.nodes
                }
                (Some(vt), true) => {
                    let b = bridge_aggregate(p, u, vt, &w_q, &self.bridge_gcn_v, self.question_loops, lambda)
                        .stage("appearance to motion")?;
                    let d = v2v_deliver(p, mt, &b.refined, &self.deliver_m, lambda).stage("appearance to motion")?;
                    trace.bridge_v = Some(b.attention.to_data());
                    trace.s_b_m = Some(d.interaction.to_data());
                    visuals.u_b_v = Some(b.aggregated);
                    visuals.u_hat_b_v = Some(b.refined);
                    d.nodes
                }
                _ => {
                    let fc = self.out_m.as_ref().expect("created when motion has no appearance input");
                    fc.forward(p, mt).stage("motion output")?
                }
            });
        }

        let graphs = GraphBundle {
            w_v: w_v.map(|w| w.to_data()),
            w_m: w_m.map(|w| w.to_data()),
            w_q: w_q.to_data(),
            a_q,
            e_q: e_q.to_data(),
        };
        Ok(PipelineOutput {
            visuals,
            graphs,
            trace,
        })
    }
}

type Stream<T> = Option<(Tensor<T>, Tensor<T>, Tensor<T>, Option<Tensor<T>>)>;

fn split<T: Scalar>(s: Stream<T>) -> (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>) {
    match s {
        Some((hat, w, tilde, s)) => (Some(hat), Some(w), Some(tilde), s),
        None => (None, None, None, None),
    }
}
