//! Per-user Markov net-generation models and the joint background chain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::markov::stationary_distribution;
use crate::markov::{check_stochastic, communicating_classes, residual};

/// Drifts within this distance of zero count as neither demanding nor generating.
pub const ZERO_DRIFT_TOL: f64 = 1e-12;

/// One user's integer net-generation support and its Markov transition law.
///
/// Support values are energy units per step; positive means surplus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawUser")]
pub struct UserModel {
    label: String,
    support: Vec<i64>,
    transitions: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawUser {
    label: String,
    support: Vec<i64>,
    transitions: Vec<Vec<f64>>,
}

impl TryFrom<RawUser> for UserModel {
    type Error = Error;
    fn try_from(raw: RawUser) -> Result<Self> {
        UserModel::new(raw.label, raw.support, raw.transitions)
    }
}

impl UserModel {
    pub fn new(
        label: impl Into<String>,
        support: Vec<i64>,
        transitions: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let label = label.into();
        let invalid = |reason: String| Error::InvalidUser {
            label: label.clone(),
            reason,
        };
        if support.len() != transitions.len() {
            return Err(invalid(format!(
                "support has {} values but transition matrix has {} rows",
                support.len(),
                transitions.len()
            )));
        }
        let mut sorted = support.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != support.len() {
            return Err(invalid("support values must be distinct".into()));
        }
        if !support.iter().any(|&s| s > 0) || !support.iter().any(|&s| s < 0) {
            return Err(invalid(
                "support must contain a positive and a negative value".into(),
            ));
        }
        check_stochastic(&transitions)?;
        Ok(Self {
            label,
            support,
            transitions,
        })
    }

    /// Unit user on (+1, -1) with kernel `[[p, 1 - p], [1 - q, q]]`.
    pub fn two_state(label: impl Into<String>, p: f64, q: f64) -> Result<Self> {
        Self::new(label, vec![1, -1], vec![vec![p, 1.0 - p], vec![1.0 - q, q]])
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn support(&self) -> &[i64] {
        &self.support
    }

    pub fn transitions(&self) -> &[Vec<f64>] {
        &self.transitions
    }

    /// Largest injection `s+`.
    pub fn max_surplus(&self) -> i64 {
        *self.support.iter().max().unwrap()
    }

    /// Most negative value `s-`.
    pub fn max_deficit(&self) -> i64 {
        *self.support.iter().min().unwrap()
    }

    /// Stationary law over this user's own chain.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        stationary_distribution(&self.transitions)
    }

    /// Steady-state mean net generation of the user's own chain.
    pub fn drift(&self) -> Result<f64> {
        let pi = self.stationary()?;
        Ok(self
            .support
            .iter()
            .zip(&pi)
            .map(|(&s, &p)| s as f64 * p)
            .sum())
    }
}

/// How the users' net-generation processes are coupled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    Independent,
    /// Explicit joint chain; each state lists one net-generation value per user.
    Joint {
        states: Vec<Vec<i64>>,
        kernel: Vec<Vec<f64>>,
    },
}

/// The background chain `X(.)` over joint net-generation vectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointChain {
    users: Vec<UserModel>,
    states: Vec<Vec<i64>>,
    kernel: Vec<Vec<f64>>,
    stationary: Vec<f64>,
    user_drifts: Vec<f64>,
    system_drift: f64,
}

/// Drift decomposition of a joint chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftSummary {
    pub user_drifts: Vec<f64>,
    pub system_drift: f64,
    /// Users with strictly negative drift (0-based).
    pub demanding: Vec<usize>,
    /// Users with strictly positive drift (0-based).
    pub generating: Vec<usize>,
}

impl JointChain {
    pub fn users(&self) -> &[UserModel] {
        &self.users
    }
    pub fn num_users(&self) -> usize {
        self.users.len()
    }
    pub fn states(&self) -> &[Vec<i64>] {
        &self.states
    }
    pub fn kernel(&self) -> &[Vec<f64>] {
        &self.kernel
    }
    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }
    pub fn user_drifts(&self) -> &[f64] {
        &self.user_drifts
    }
    pub fn system_drift(&self) -> f64 {
        self.system_drift
    }
    pub fn len(&self) -> usize {
        self.states.len()
    }
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// `max |pi P - pi|`.
    pub fn stationarity_residual(&self) -> f64 {
        residual(&self.kernel, &self.stationary)
    }
}

/// Builds the joint background chain. With independent coupling the states are the
/// Cartesian product of the supports (first user varies slowest) and the kernel is
/// the tensor product of the user kernels.
pub fn build_joint_chain(users: Vec<UserModel>, coupling: Coupling) -> Result<JointChain> {
    if users.is_empty() {
        return Err(Error::EmptyUserList);
    }
    let (states, kernel) = match coupling {
        Coupling::Independent => product_chain(&users),
        Coupling::Joint { states, kernel } => {
            validate_joint(&users, &states, &kernel)?;
            (states, kernel)
        }
    };
    check_stochastic(&kernel)?;
    if let Some(state) = (0..kernel.len()).find(|&i| kernel[i][i] <= 0.0) {
        return Err(Error::SelfLoopViolated { state });
    }
    let classes = communicating_classes(&kernel);
    if classes.len() != 1 {
        return Err(Error::Reducible { classes });
    }
    let stationary = stationary_distribution(&kernel)?;
    let user_drifts: Vec<f64> = (0..users.len())
        .map(|i| {
            states
                .iter()
                .zip(&stationary)
                .map(|(s, &p)| s[i] as f64 * p)
                .sum()
        })
        .collect();
    let system_drift = user_drifts.iter().sum();
    Ok(JointChain {
        users,
        states,
        kernel,
        stationary,
        user_drifts,
        system_drift,
    })
}

fn product_chain(users: &[UserModel]) -> (Vec<Vec<i64>>, Vec<Vec<f64>>) {
    let dims: Vec<usize> = users.iter().map(|u| u.support.len()).collect();
    let total: usize = dims.iter().product();
    let index_tuple = |mut k: usize| -> Vec<usize> {
        let mut idx = vec![0; dims.len()];
        for (slot, &d) in idx.iter_mut().zip(&dims).rev() {
            *slot = k % d;
            k /= d;
        }
        idx
    };
    let tuples: Vec<Vec<usize>> = (0..total).map(index_tuple).collect();
    let states = tuples
        .iter()
        .map(|t| t.iter().zip(users).map(|(&k, u)| u.support[k]).collect())
        .collect();
    let kernel = tuples
        .iter()
        .map(|from| {
            tuples
                .iter()
                .map(|to| {
                    users
                        .iter()
                        .enumerate()
                        .map(|(i, u)| u.transitions[from[i]][to[i]])
                        .product()
                })
                .collect()
        })
        .collect();
    (states, kernel)
}

fn validate_joint(users: &[UserModel], states: &[Vec<i64>], kernel: &[Vec<f64>]) -> Result<()> {
    if states.len() != kernel.len() {
        return Err(Error::InvalidJointChain(format!(
            "{} states but kernel has {} rows",
            states.len(),
            kernel.len()
        )));
    }
    for (k, s) in states.iter().enumerate() {
        if s.len() != users.len() {
            return Err(Error::InvalidJointChain(format!(
                "state {k} has {} components, expected {}",
                s.len(),
                users.len()
            )));
        }
        for (i, (v, u)) in s.iter().zip(users).enumerate() {
            if !u.support.contains(v) {
                return Err(Error::InvalidJointChain(format!(
                    "state {k}: value {v} not in support of user {i} ({})",
                    u.label
                )));
            }
        }
    }
    let mut sorted = states.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != states.len() {
        return Err(Error::InvalidJointChain("duplicate joint states".into()));
    }
    Ok(())
}

/// Per-user and system drifts, plus the net-demanding and net-generating sets.
pub fn drifts(chain: &JointChain) -> DriftSummary {
    let user_drifts = chain.user_drifts.clone();
    let demanding = (0..user_drifts.len())
        .filter(|&i| user_drifts[i] < -ZERO_DRIFT_TOL)
        .collect();
    let generating = (0..user_drifts.len())
        .filter(|&i| user_drifts[i] > ZERO_DRIFT_TOL)
        .collect();
    DriftSummary {
        system_drift: chain.system_drift,
        user_drifts,
        demanding,
        generating,
    }
}

/// Stationary mass on the +1 state of a two-state unit user: `(1 - q) / (2 - p - q)`.
pub fn generation_probability(user: &UserModel) -> Result<f64> {
    if user.support != [1, -1] {
        return Err(Error::WrongShape {
            support: user.support.clone(),
        });
    }
    let p = user.transitions[0][0];
    let q = user.transitions[1][1];
    let denom = 2.0 - p - q;
    if denom <= 0.0 {
        return Err(Error::Degenerate);
    }
    Ok((1.0 - q) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gen() -> UserModel {
        UserModel::two_state("gen", 0.6, 0.4).unwrap()
    }
    fn dem() -> UserModel {
        UserModel::two_state("dem", 0.4, 0.6).unwrap()
    }
    fn hi() -> UserModel {
        UserModel::two_state("hi", 0.95, 0.05).unwrap()
    }
    fn lo() -> UserModel {
        UserModel::two_state("lo", 0.51, 0.49).unwrap()
    }

    #[test]
    fn single_generating_user() {
        let c = build_joint_chain(vec![gen()], Coupling::Independent).unwrap();
        assert_eq!(c.len(), 2);
        assert_abs_diff_eq!(c.user_drifts()[0], 0.2, epsilon = 1e-12);
    }

    #[test]
    fn two_independent_users() {
        let c = build_joint_chain(vec![hi(), lo()], Coupling::Independent).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.states()[0], vec![1, 1]);
        assert_eq!(c.states()[1], vec![1, -1]);
        assert_eq!(c.states()[2], vec![-1, 1]);
        assert_abs_diff_eq!(c.system_drift(), 0.9 + 0.02, epsilon = 1e-12);
        assert!(c.stationarity_residual() <= 1e-10);
    }

    #[test]
    fn malformed_user_kernel() {
        let err = UserModel::new("bad", vec![1, -1], vec![vec![0.5, 0.5], vec![0.5, 0.4]])
            .unwrap_err();
        assert!(matches!(err, Error::NotStochastic { row: 1, .. }));
    }

    #[test]
    fn support_needs_both_signs() {
        assert!(UserModel::new("x", vec![1, 2], vec![vec![0.5, 0.5], vec![0.5, 0.5]]).is_err());
        assert!(UserModel::new("x", vec![1, 1], vec![vec![0.5, 0.5], vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn empty_user_list() {
        assert_eq!(
            build_joint_chain(vec![], Coupling::Independent).unwrap_err(),
            Error::EmptyUserList
        );
    }

    #[test]
    fn self_loop_required() {
        let u = UserModel::new("flip", vec![1, -1], vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            build_joint_chain(vec![u], Coupling::Independent),
            Err(Error::SelfLoopViolated { state: 0 })
        ));
    }

    #[test]
    fn explicit_joint_kernel() {
        // Perfectly correlated users.
        let coupling = Coupling::Joint {
            states: vec![vec![1, 1], vec![-1, -1]],
            kernel: vec![vec![0.7, 0.3], vec![0.3, 0.7]],
        };
        let c = build_joint_chain(vec![gen(), dem()], coupling).unwrap();
        assert_eq!(c.len(), 2);
        assert_abs_diff_eq!(c.user_drifts()[0], 0.0, epsilon = 1e-12);

        let bad = Coupling::Joint {
            states: vec![vec![1, 2], vec![-1, -1]],
            kernel: vec![vec![0.7, 0.3], vec![0.3, 0.7]],
        };
        assert!(matches!(
            build_joint_chain(vec![gen(), dem()], bad),
            Err(Error::InvalidJointChain(_))
        ));

        let reducible = Coupling::Joint {
            states: vec![vec![1, 1], vec![-1, -1]],
            kernel: vec![vec![1.0, 0.0], vec![0.3, 0.7]],
        };
        assert!(matches!(
            build_joint_chain(vec![gen(), dem()], reducible),
            Err(Error::Reducible { .. })
        ));
    }

    #[test]
    fn drift_sets() {
        let c = build_joint_chain(vec![dem()], Coupling::Independent).unwrap();
        let d = drifts(&c);
        assert_abs_diff_eq!(d.user_drifts[0], -0.2, epsilon = 1e-12);
        assert_eq!(d.demanding, vec![0]);

        let sym = UserModel::two_state("sym", 0.5, 0.5).unwrap();
        let d = drifts(&build_joint_chain(vec![sym], Coupling::Independent).unwrap());
        assert!(d.demanding.is_empty() && d.generating.is_empty());

        let d = drifts(&build_joint_chain(vec![hi(), dem()], Coupling::Independent).unwrap());
        assert_eq!(d.generating, vec![0]);
        assert_eq!(d.demanding, vec![1]);
        assert_abs_diff_eq!(d.system_drift, 0.7, epsilon = 1e-12);
    }

    #[test]
    fn generation_probabilities() {
        assert_abs_diff_eq!(generation_probability(&hi()).unwrap(), 0.95, epsilon = 1e-12);
        assert_abs_diff_eq!(generation_probability(&lo()).unwrap(), 0.51, epsilon = 1e-12);
        let sym = UserModel::two_state("sym", 0.5, 0.5).unwrap();
        assert_abs_diff_eq!(generation_probability(&sym).unwrap(), 0.5, epsilon = 1e-12);

        let stuck = UserModel::two_state("stuck", 1.0, 1.0).unwrap();
        assert_eq!(generation_probability(&stuck).unwrap_err(), Error::Degenerate);

        let flipped =
            UserModel::new("f", vec![-1, 1], vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert!(matches!(
            generation_probability(&flipped),
            Err(Error::WrongShape { .. })
        ));
    }

    #[test]
    fn user_deserializes_with_validation() {
        let ok: UserModel = serde_json::from_str(
            r#"{"label":"a","support":[1,-1],"transitions":[[0.6,0.4],[0.6,0.4]]}"#,
        )
        .unwrap();
        assert_eq!(ok.label(), "a");
        let bad = serde_json::from_str::<UserModel>(
            r#"{"label":"a","support":[1,-1],"transitions":[[0.6,0.4],[0.6,0.3]]}"#,
        );
        assert!(bad.is_err());
    }
}
