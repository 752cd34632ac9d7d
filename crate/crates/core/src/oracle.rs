//! Exact brute-force quadratic hedging on small finite trees.
//!
//! The brute-force solver stacks one unknown per tree node and solves the
//! global weighted least-squares problem directly. It shares no code with the
//! backward recursion, which is what makes it useful as a reference.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{HedgeError, Result};
use crate::hedging::{step_backward_discrete, Atom, DiscountCurve, DiscreteStep};
use crate::models::{DiscreteReturn, RegimeSwitchingModel, ReturnLaw};
use crate::payoff::Payoff;

/// Maximum number of nodes `build_tree_from_rs` will create.
pub const NODE_CAP: usize = 10_000;

/// Singular values below this fraction of the largest make the system degenerate.
const RANK_TOLERANCE: f64 = 1e-10;

const REFINEMENT_STEPS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub period: usize,
    pub regime: usize,
    /// Probability of reaching the node from the root.
    pub prob: f64,
    /// Probability of the branch from the parent.
    pub branch_prob: f64,
    /// Discounted prices `beta_k S_k`.
    pub price: Vec<f64>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// Explicit finite filtration. Every node is a distinct history, and parents
/// always precede their children.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketTree {
    nodes: Vec<TreeNode>,
    n_periods: usize,
}

impl MarketTree {
    pub fn new(root_price: Vec<f64>, root_regime: usize) -> Self {
        Self {
            nodes: vec![TreeNode {
                period: 0,
                regime: root_regime,
                prob: 1.0,
                branch_prob: 1.0,
                price: root_price,
                parent: None,
                children: Vec::new(),
            }],
            n_periods: 0,
        }
    }

    pub fn add_child(&mut self, parent: usize, branch_prob: f64, price: Vec<f64>, regime: usize) -> Result<usize> {
        let p = self
            .nodes
            .get(parent)
            .ok_or_else(|| HedgeError::InvalidArgument(format!("no node {parent}")))?;
        if !(branch_prob > 0.0 && branch_prob <= 1.0) {
            return Err(HedgeError::InvalidArgument(format!("branch probability {branch_prob}")));
        }
        if price.len() != p.price.len() || price.iter().any(|x| !x.is_finite()) {
            return Err(HedgeError::InvalidArgument("child price has wrong dimension or is not finite".into()));
        }
        let node = TreeNode {
            period: p.period + 1,
            regime,
            prob: p.prob * branch_prob,
            branch_prob,
            price,
            parent: Some(parent),
            children: Vec::new(),
        };
        self.n_periods = self.n_periods.max(node.period);
        let idx = self.nodes.len();
        self.nodes.push(node);
        self.nodes[parent].children.push(idx);
        Ok(idx)
    }

    /// Branch probabilities sum to one and every leaf sits at the horizon.
    pub fn validate(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if node.children.is_empty() {
                if node.period != self.n_periods {
                    return Err(HedgeError::InvalidArgument(format!(
                        "leaf {i} at period {} before horizon {}",
                        node.period, self.n_periods
                    )));
                }
            } else {
                let total: f64 = node.children.iter().map(|&c| self.nodes[c].branch_prob).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(HedgeError::InvalidArgument(format!(
                        "branch probabilities at node {i} sum to {total}"
                    )));
                }
            }
        }
        if self.n_periods == 0 {
            return Err(HedgeError::InvalidArgument("tree has no periods".into()));
        }
        Ok(())
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &TreeNode {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].price.len()
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].children.is_empty())
    }

    /// Discounted increment on the edge into `child`.
    pub fn delta(&self, child: usize) -> Vec<f64> {
        let c = &self.nodes[child];
        let p = &self.nodes[c.parent.expect("root has no increment")];
        c.price.iter().zip(&p.price).map(|(a, b)| a - b).collect()
    }
}

/// Enumerates every regime and return combination of a regime-switching model
/// over `n` periods, with `atoms_per_regime` quadrature atoms per regime
/// (discrete laws use their own atoms).
pub fn build_tree_from_rs(
    model: &RegimeSwitchingModel,
    n: usize,
    s0: &[f64],
    initial_regime: usize,
    atoms_per_regime: usize,
    seed: u64,
) -> Result<MarketTree> {
    if s0.len() != model.dim() || initial_regime >= model.n_regimes() || n == 0 {
        return Err(HedgeError::InvalidArgument(
            "tree needs n >= 1, a price per asset and a valid initial regime".into(),
        ));
    }
    let disc = model.discretize(seed, atoms_per_regime)?;
    let q = model.transition();
    let mut tree = MarketTree::new(s0.to_vec(), initial_regime);
    let mut frontier = vec![0usize];
    for _ in 0..n {
        let mut next = Vec::new();
        for &node in &frontier {
            let regime = tree.nodes[node].regime;
            for (j, rule) in disc.rules.iter().enumerate() {
                let qij = q[regime][j];
                if qij == 0.0 {
                    continue;
                }
                for (w, xi) in rule.iter() {
                    if w == 0.0 {
                        continue;
                    }
                    if tree.len() >= NODE_CAP {
                        return Err(HedgeError::TreeTooLarge { nodes: tree.len() + 1, cap: NODE_CAP });
                    }
                    let price = tree.nodes[node].price.iter().zip(xi).map(|(x, y)| x * (1.0 + y)).collect();
                    next.push(tree.add_child(node, qij * w, price, j)?);
                }
            }
        }
        frontier = next;
    }
    renormalize(&mut tree);
    Ok(tree)
}

/// Size limits for [`random_tree`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomTreeSpec {
    pub max_periods: usize,
    /// Children per node, summed over regimes.
    pub max_branching: usize,
    pub max_assets: usize,
    pub max_regimes: usize,
}

impl Default for RandomTreeSpec {
    fn default() -> Self {
        Self { max_periods: 3, max_branching: 4, max_assets: 2, max_regimes: 2 }
    }
}

/// A random hedging problem on a regime-switching tree.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomTree {
    pub tree: MarketTree,
    pub payoff: Payoff,
    pub discount: DiscountCurve,
}

/// Draws a regime-switching model with discrete returns and enumerates its
/// tree. Every regime gets at least `d + 1` atoms, and laws whose covariance
/// is nearly singular are redrawn, so the hedge is well determined. When the
/// branching budget cannot afford `d + 1` atoms for every regime, a single
/// regime is used.
pub fn random_tree<R: Rng + ?Sized>(rng: &mut R, spec: &RandomTreeSpec) -> Result<RandomTree> {
    let n = rng.random_range(1..=spec.max_periods.max(1));
    let d = rng.random_range(1..=spec.max_assets.max(1));
    let mut l = rng.random_range(1..=spec.max_regimes.max(1));
    let atoms_for = |l: usize| (d + 1, spec.max_branching / l);
    if atoms_for(l).0 > atoms_for(l).1 {
        l = 1;
    }
    let (lo, hi) = atoms_for(l);
    if lo > hi {
        return Err(HedgeError::InvalidArgument(format!(
            "branching {} cannot support {d} assets",
            spec.max_branching
        )));
    }
    let regimes = (0..l)
        .map(|_| loop {
            let m = rng.random_range(lo..=hi);
            let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = w.iter().sum();
            let atoms: Vec<DiscreteReturn> = w
                .iter()
                .map(|p| DiscreteReturn {
                    prob: p / total,
                    xi: (0..d).map(|_| rng.random_range(-0.25..0.25)).collect(),
                })
                .collect();
            if well_conditioned(&atoms) {
                break ReturnLaw::Discrete { atoms };
            }
        })
        .collect();
    let transition = (0..l)
        .map(|_| {
            let row: Vec<f64> = (0..l).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = row.iter().sum();
            row.into_iter().map(|q| q / total).collect()
        })
        .collect();
    let model = RegimeSwitchingModel::new(transition, regimes)?;
    let tree = build_tree_from_rs(&model, n, &vec![1.0; d], rng.random_range(0..l), hi, 0)?;
    let strike = rng.random_range(0.85..1.15);
    let payoff = match (d, rng.random_bool(0.5)) {
        (1, true) => Payoff::Call { strike },
        (1, false) => Payoff::Put { strike },
        _ => {
            let w: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = w.iter().sum();
            Payoff::BasketCall { strike, weights: w.into_iter().map(|x| x / total).collect() }
        }
    };
    let discount = DiscountCurve::new(rng.random_range(0.0..0.1), 1.0 / n as f64, n)?;
    Ok(RandomTree { tree, payoff, discount })
}

/// Smallest covariance eigenvalue at least 1e-4 and at least 1% of the largest.
fn well_conditioned(atoms: &[DiscreteReturn]) -> bool {
    let d = atoms[0].xi.len();
    let mean = atoms.iter().fold(DVector::zeros(d), |acc, a| acc + DVector::from_column_slice(&a.xi) * a.prob);
    let mut cov = DMatrix::zeros(d, d);
    for a in atoms {
        let x = DVector::from_column_slice(&a.xi) - &mean;
        cov.ger(a.prob, &x, &x, 1.0);
    }
    let eig = cov.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    lo >= 1e-4 && lo >= 1e-2 * hi
}

/// Removes rounding drift in the branch probabilities of generated trees.
fn renormalize(tree: &mut MarketTree) {
    for i in 0..tree.nodes.len() {
        let children = tree.nodes[i].children.clone();
        let total: f64 = children.iter().map(|&c| tree.nodes[c].branch_prob).sum();
        for c in children {
            tree.nodes[c].branch_prob /= total;
            tree.nodes[c].prob = tree.nodes[i].prob * tree.nodes[c].branch_prob;
        }
    }
}

/// `beta_n C(S_n)` at every leaf, zero elsewhere.
pub fn discounted_payoffs(tree: &MarketTree, payoff: &Payoff, discount: &DiscountCurve) -> Result<Vec<f64>> {
    let n = tree.n_periods();
    if discount.n_periods() != n {
        return Err(HedgeError::InvalidArgument(format!(
            "discount curve has {} periods, tree has {n}",
            discount.n_periods()
        )));
    }
    let beta = discount.beta(n);
    Ok(tree
        .nodes()
        .iter()
        .map(|node| {
            if node.children.is_empty() {
                let cash: Vec<f64> = node.price.iter().map(|x| x / beta).collect();
                beta * payoff.eval(&cash)
            } else {
                0.0
            }
        })
        .collect())
}

/// Minimizer of `E[G^2]` with one hedge vector per non-terminal node.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    pub v0: f64,
    /// Hedge at each node, empty for leaves.
    pub phi: Vec<Vec<f64>>,
    pub mse: f64,
}

/// Hedging error `G` at every leaf as `(leaf, probability, G)`.
pub fn hedging_errors(tree: &MarketTree, targets: &[f64], v0: f64, phi: &[Vec<f64>]) -> Vec<(usize, f64, f64)> {
    tree.leaves()
        .map(|leaf| {
            let mut gain = 0.0;
            let mut c = leaf;
            while let Some(a) = tree.node(c).parent {
                gain += phi[a].iter().zip(tree.delta(c)).map(|(p, d)| p * d).sum::<f64>();
                c = a;
            }
            (leaf, tree.node(leaf).prob, targets[leaf] - v0 - gain)
        })
        .collect()
}

pub fn expected_squared_error(tree: &MarketTree, targets: &[f64], v0: f64, phi: &[Vec<f64>]) -> f64 {
    hedging_errors(tree, targets, v0, phi).iter().map(|(_, p, g)| p * g * g).sum()
}

/// Solves the global problem as a weighted least-squares system in
/// `(V_0, phi at every non-terminal node)`.
pub fn brute_force_solve(tree: &MarketTree, payoff: &Payoff, discount: &DiscountCurve) -> Result<ExactSolution> {
    tree.validate()?;
    let targets = discounted_payoffs(tree, payoff, discount)?;
    brute_force_targets(tree, &targets)
}

/// As [`brute_force_solve`] with explicit discounted leaf targets.
pub fn brute_force_targets(tree: &MarketTree, targets: &[f64]) -> Result<ExactSolution> {
    let d = tree.dim();
    let mut offset = vec![usize::MAX; tree.len()];
    let mut cols = 1;
    for (i, node) in tree.nodes().iter().enumerate() {
        if !node.children.is_empty() {
            offset[i] = cols;
            cols += d;
        }
    }
    let leaves: Vec<usize> = tree.leaves().collect();
    let mut design = DMatrix::zeros(leaves.len(), cols);
    let mut rhs = DVector::zeros(leaves.len());
    for (row, &leaf) in leaves.iter().enumerate() {
        let w = tree.node(leaf).prob.sqrt();
        design[(row, 0)] = w;
        rhs[row] = w * targets[leaf];
        let mut c = leaf;
        while let Some(a) = tree.node(c).parent {
            for (j, x) in tree.delta(c).into_iter().enumerate() {
                design[(row, offset[a] + j)] = w * x;
            }
            c = a;
        }
    }
    if leaves.len() < cols {
        return Err(HedgeError::DegenerateModel(format!(
            "{} leaves cannot determine {cols} unknowns",
            leaves.len()
        )));
    }
    // Columns of nodes deep in the tree carry tiny weights; equilibrating them
    // keeps the conditioning of the problem rather than of its scaling.
    let scale: Vec<f64> = design
        .column_iter()
        .map(|c| {
            let norm = c.norm();
            if norm > 0.0 {
                1.0 / norm
            } else {
                1.0
            }
        })
        .collect();
    for (j, &f) in scale.iter().enumerate() {
        design.column_mut(j).scale_mut(f);
    }
    let sv = design.singular_values();
    let (max, min) = (sv.max(), sv.min());
    if !(min > RANK_TOLERANCE * max) {
        return Err(HedgeError::DegenerateModel(format!(
            "hedging system is singular (singular values {min:e} / {max:e})"
        )));
    }
    // The SVD only decides the rank; Householder QR gives the accurate solve.
    let qr = design.clone().qr();
    let r = qr.r();
    let solve_r = |rhs: &DVector<f64>, transpose: bool| {
        let sol = if transpose { r.tr_solve_upper_triangular(rhs) } else { r.solve_upper_triangular(rhs) };
        sol.ok_or_else(|| HedgeError::DegenerateModel("triangular factor is singular".into()))
    };
    let mut x = solve_r(&qr.q().tr_mul(&rhs), false)?;
    // Corrected seminormal equations with a compensated residual.
    for _ in 0..REFINEMENT_STEPS {
        let g = design.tr_mul(&compensated_residual(&design, &rhs, &x));
        x += solve_r(&solve_r(&g, true)?, false)?;
    }
    for (v, f) in x.iter_mut().zip(&scale) {
        *v *= f;
    }
    let phi: Vec<Vec<f64>> = (0..tree.len())
        .map(|i| {
            if offset[i] == usize::MAX {
                Vec::new()
            } else {
                x.rows(offset[i], d).iter().copied().collect()
            }
        })
        .collect();
    let v0 = x[0];
    let mse = expected_squared_error(tree, targets, v0, &phi);
    Ok(ExactSolution { v0, phi, mse })
}

/// `y - X x` with each row summed in twice-working precision (TwoSum and an
/// FMA-based TwoProduct), so refinement is not limited by cancellation.
fn compensated_residual(design: &DMatrix<f64>, rhs: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(rhs.len(), |i, _| {
        let (mut sum, mut err) = (rhs[i], 0.0);
        for j in 0..x.len() {
            let a = -design[(i, j)];
            let p = a * x[j];
            let p_err = a.mul_add(x[j], -p);
            let t = sum + p;
            let z = t - sum;
            err += (sum - (t - z)) + (p - z) + p_err;
            sum = t;
        }
        sum + err
    })
}

/// The backward recursion evaluated node by node on a tree.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeRecursion {
    /// `gamma_{k+1}` at each period-`k` node, one at leaves.
    pub gamma: Vec<f64>,
    /// Discounted option value `beta_k C_k` at each node.
    pub value: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    /// Optimal discounted portfolio value `V_k` along each history.
    pub portfolio: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
}

impl TreeRecursion {
    pub fn v0(&self) -> f64 {
        self.portfolio[0]
    }
}

/// Runs `step_backward_discrete` bottom-up, then the strategy forward.
pub fn tree_recursion(tree: &MarketTree, payoff: &Payoff, discount: &DiscountCurve) -> Result<TreeRecursion> {
    tree.validate()?;
    let targets = discounted_payoffs(tree, payoff, discount)?;
    tree_recursion_targets(tree, &targets)
}

pub fn tree_recursion_targets(tree: &MarketTree, targets: &[f64]) -> Result<TreeRecursion> {
    let n = tree.len();
    let mut gamma = vec![1.0; n];
    let mut value = targets.to_vec();
    let mut alpha = vec![Vec::new(); n];
    let mut b = vec![Vec::new(); n];
    for i in (0..n).rev() {
        let node = tree.node(i);
        if node.children.is_empty() {
            continue;
        }
        let atoms = node
            .children
            .iter()
            .enumerate()
            .map(|(local, &c)| Atom {
                prob: tree.node(c).branch_prob,
                delta: DVector::from_vec(tree.delta(c)),
                next_state: local,
            })
            .collect();
        let step = DiscreteStep::new(atoms)?;
        let g_next: Vec<f64> = node.children.iter().map(|&c| gamma[c]).collect();
        let c_next: Vec<f64> = node.children.iter().map(|&c| value[c]).collect();
        let sol = step_backward_discrete(&step, &g_next, &c_next, (1.0, 1.0))
            .map_err(|e| e.with_context(format!("tree node {i} (period {})", node.period)))?;
        gamma[i] = sol.coeffs.gamma;
        value[i] = sol.c_prev;
        alpha[i] = sol.alpha.iter().copied().collect();
        b[i] = sol.coeffs.b.iter().copied().collect();
    }
    let mut portfolio = vec![0.0; n];
    let mut phi = vec![Vec::new(); n];
    portfolio[0] = value[0];
    for i in 0..n {
        let node = tree.node(i);
        if node.children.is_empty() {
            continue;
        }
        let v = portfolio[i];
        phi[i] = alpha[i].iter().zip(&b[i]).map(|(a, bb)| a - v * bb).collect();
        for &c in &node.children {
            portfolio[c] = v + phi[i].iter().zip(tree.delta(c)).map(|(p, d)| p * d).sum::<f64>();
        }
    }
    Ok(TreeRecursion { gamma, value, alpha, b, portfolio, phi })
}

/// Comparison of the recursion with the brute-force solution.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub n_nodes: usize,
    pub v0_recursion: f64,
    pub v0_oracle: f64,
    pub mse_recursion: f64,
    pub mse_oracle: f64,
    /// Largest absolute difference over `V_0` and every hedge component.
    pub max_deviation: f64,
}

pub fn recursion_vs_oracle(tree: &MarketTree, payoff: &Payoff, discount: &DiscountCurve) -> Result<OracleReport> {
    tree.validate()?;
    let targets = discounted_payoffs(tree, payoff, discount)?;
    let exact = brute_force_targets(tree, &targets)?;
    let rec = tree_recursion_targets(tree, &targets)?;
    let mut dev = (exact.v0 - rec.v0()).abs();
    for (a, b) in exact.phi.iter().zip(&rec.phi) {
        for (x, y) in a.iter().zip(b) {
            dev = dev.max((x - y).abs());
        }
    }
    Ok(OracleReport {
        n_nodes: tree.len(),
        v0_recursion: rec.v0(),
        v0_oracle: exact.v0,
        mse_recursion: expected_squared_error(tree, &targets, rec.v0(), &rec.phi),
        mse_oracle: exact.mse,
        max_deviation: dev,
    })
}

/// Sampled form of the first-order conditions: `E[G]` and the largest
/// `|E[G Delta | node]|` over non-terminal nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalResiduals {
    pub mean_error: f64,
    pub max_conditional: f64,
}

pub fn normal_equation_residuals(tree: &MarketTree, targets: &[f64], v0: f64, phi: &[Vec<f64>]) -> NormalResiduals {
    let d = tree.dim();
    let mut cond = vec![vec![0.0; d]; tree.len()];
    let mut mean = 0.0;
    for (leaf, p, g) in hedging_errors(tree, targets, v0, phi) {
        mean += p * g;
        let mut c = leaf;
        while let Some(a) = tree.node(c).parent {
            for (acc, x) in cond[a].iter_mut().zip(tree.delta(c)) {
                *acc += p * g * x;
            }
            c = a;
        }
    }
    let max_conditional = tree
        .nodes()
        .iter()
        .zip(&cond)
        .filter(|(node, _)| !node.children.is_empty())
        .map(|(node, v)| v.iter().map(|x| x * x).sum::<f64>().sqrt() / node.prob)
        .fold(0.0, f64::max);
    NormalResiduals { mean_error: mean, max_conditional }
}

/// Largest residual over nodes of
/// `E[V_n | F_k] = V_k E[P_{k+1} | F_k] + E[beta_n C (1 - P_{k+1}) | F_k]`.
pub fn value_identity_residual(tree: &MarketTree, targets: &[f64], rec: &TreeRecursion) -> f64 {
    let n = tree.len();
    let (mut sum_v, mut sum_p, mut sum_cp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for leaf in tree.leaves() {
        let p = tree.node(leaf).prob;
        let vn = rec.portfolio[leaf];
        let c = targets[leaf];
        let mut weight = 1.0;
        sum_v[leaf] += p * vn;
        sum_p[leaf] += p;
        let mut child = leaf;
        while let Some(a) = tree.node(child).parent {
            weight *= 1.0 - rec.b[a].iter().zip(tree.delta(child)).map(|(x, y)| x * y).sum::<f64>();
            sum_v[a] += p * vn;
            sum_p[a] += p * weight;
            sum_cp[a] += p * c * (1.0 - weight);
            child = a;
        }
    }
    (0..n)
        .map(|i| {
            let pa = tree.node(i).prob;
            (sum_v[i] / pa - rec.portfolio[i] * sum_p[i] / pa - sum_cp[i] / pa).abs()
        })
        .fold(0.0, f64::max)
}

/// Residuals of the martingale properties of `U`, `beta C Z` and `beta S Z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleResiduals {
    /// `max |E[U_k | parent] - 1|`.
    pub u_deviation: f64,
    /// Spread over `k` of `E[beta_k C_k Z_k]`.
    pub value_spread: f64,
    /// Spread over `k` of `E[beta_k S_k Z_k]`, worst asset.
    pub price_spread: f64,
}

pub fn martingale_residuals(tree: &MarketTree, rec: &TreeRecursion) -> MartingaleResiduals {
    let n = tree.len();
    let d = tree.dim();
    let mut z = vec![1.0; n];
    let mut u_deviation: f64 = 0.0;
    for i in 0..n {
        let node = tree.node(i);
        if node.children.is_empty() {
            continue;
        }
        let mut eu = 0.0;
        for &c in &node.children {
            let factor = 1.0 - rec.b[i].iter().zip(tree.delta(c)).map(|(x, y)| x * y).sum::<f64>();
            let u = factor * rec.gamma[c] / rec.gamma[i];
            z[c] = z[i] * u;
            eu += tree.node(c).branch_prob * u;
        }
        u_deviation = u_deviation.max((eu - 1.0).abs());
    }
    let periods = tree.n_periods() + 1;
    let mut value = vec![0.0; periods];
    let mut price = vec![vec![0.0; d]; periods];
    for (i, node) in tree.nodes().iter().enumerate() {
        value[node.period] += node.prob * z[i] * rec.value[i];
        for (acc, x) in price[node.period].iter_mut().zip(&node.price) {
            *acc += node.prob * z[i] * x;
        }
    }
    let spread = |xs: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        hi - lo
    };
    let value_spread = spread(&mut value.iter().copied());
    let price_spread = (0..d)
        .map(|a| spread(&mut price.iter().map(|p| p[a])))
        .fold(0.0, f64::max);
    MartingaleResiduals { u_deviation, value_spread, price_spread }
}

/// Largest `gamma_k - E[gamma_{k+1} | F_{k-1}]` over non-terminal nodes; a
/// submartingale gives a value at most zero up to rounding.
pub fn gamma_submartingale_violation(tree: &MarketTree, rec: &TreeRecursion) -> f64 {
    tree.nodes()
        .iter()
        .enumerate()
        .filter(|(_, node)| !node.children.is_empty())
        .map(|(i, node)| {
            let expected: f64 = node.children.iter().map(|&c| tree.node(c).branch_prob * rec.gamma[c]).sum();
            rec.gamma[i] - expected
        })
        .fold(f64::NEG_INFINITY, f64::max)
}
