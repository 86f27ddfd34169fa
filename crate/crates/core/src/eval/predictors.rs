//! The classifier toolkit used by the utility and attack evaluations.

use kgsynth_tensor::{Activation, Adam, Graph, Mlp, ParamSet, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::features::{labels, FeatureEncoder, Matrix};
use super::logistic::{fit_logistic, LogisticFit};
use super::tree::{Forest, Tree, TreeOptions};
use crate::error::{Error, Result};
use crate::rng;
use crate::schema::DataTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorKind {
    Cart { max_depth: usize, min_leaf: usize },
    RandomForest { trees: usize, max_depth: usize },
    Knn { k: usize },
    LinearSvm { lambda: f64, epochs: usize },
    LogisticRegression { l2: f64, max_iter: usize },
    Mlp { hidden: usize, epochs: usize, learning_rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    #[serde(flatten)]
    pub kind: PredictorKind,
    pub seed: u64,
}

impl PredictorSpec {
    pub fn cart(seed: u64) -> Self {
        Self {
            kind: PredictorKind::Cart { max_depth: 6, min_leaf: 1 },
            seed,
        }
    }

    pub fn random_forest(seed: u64) -> Self {
        Self {
            kind: PredictorKind::RandomForest { trees: 50, max_depth: 10 },
            seed,
        }
    }

    pub fn knn(seed: u64) -> Self {
        Self {
            kind: PredictorKind::Knn { k: 5 },
            seed,
        }
    }

    pub fn linear_svm(seed: u64) -> Self {
        Self {
            kind: PredictorKind::LinearSvm {
                lambda: 1e-3,
                epochs: 30,
            },
            seed,
        }
    }

    pub fn logistic_regression(seed: u64) -> Self {
        Self {
            kind: PredictorKind::LogisticRegression { l2: 1e-4, max_iter: 50 },
            seed,
        }
    }

    pub fn mlp(seed: u64) -> Self {
        Self {
            kind: PredictorKind::Mlp {
                hidden: 64,
                epochs: 30,
                learning_rate: 1e-3,
            },
            seed,
        }
    }

    /// The classifier battery of the utility evaluation.
    pub fn battery(seed: u64) -> Vec<Self> {
        vec![
            Self::random_forest(seed),
            Self::knn(seed),
            Self::cart(seed),
            Self::linear_svm(seed),
            Self::logistic_regression(seed),
            Self::mlp(seed),
        ]
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            PredictorKind::Cart { .. } => "cart",
            PredictorKind::RandomForest { .. } => "random_forest",
            PredictorKind::Knn { .. } => "knn",
            PredictorKind::LinearSvm { .. } => "linear_svm",
            PredictorKind::LogisticRegression { .. } => "logistic_regression",
            PredictorKind::Mlp { .. } => "mlp",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            PredictorKind::Cart { max_depth, min_leaf } => max_depth > 0 && min_leaf > 0,
            PredictorKind::RandomForest { trees, max_depth } => trees > 0 && max_depth > 0,
            PredictorKind::Knn { k } => k > 0,
            PredictorKind::LinearSvm { lambda, epochs } => lambda > 0.0 && epochs > 0,
            PredictorKind::LogisticRegression { l2, max_iter } => l2 >= 0.0 && max_iter > 0,
            PredictorKind::Mlp {
                hidden,
                epochs,
                learning_rate,
            } => hidden > 0 && epochs > 0 && learning_rate > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid {} hyperparameters", self.name())))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Model {
    Tree(Tree),
    Forest(Forest),
    Knn { x: Matrix, y: Vec<usize>, k: usize },
    /// One weight vector (bias last) per class, one-vs-rest.
    Linear(Vec<Vec<f64>>),
    Logistic(Vec<LogisticFit>),
    Mlp { net: Mlp, params: ParamSet },
}

/// A classifier fitted on one table, ready to score rows of tables sharing
/// its schema.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedPredictor {
    pub spec: PredictorSpec,
    pub target: usize,
    pub classes: usize,
    pub features: FeatureEncoder,
    model: Model,
}

/// Fits `spec` to predict discrete column `target` from all other columns.
pub fn train_predictor(spec: &PredictorSpec, train: &DataTable, target: usize) -> Result<FittedPredictor> {
    spec.validate()?;
    let col = train
        .schema()
        .columns
        .get(target)
        .ok_or_else(|| Error::InvalidArgument(format!("target column {target} out of range")))?;
    if !col.is_discrete() {
        return Err(Error::InvalidArgument(format!("target {} is not discrete", col.name)));
    }
    let y = labels(train, target)?;
    let classes = col.categories().len();
    let present = {
        let mut seen = vec![false; classes];
        y.iter().for_each(|&c| seen[c] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if present < 2 {
        return Err(Error::InvalidArgument(format!("target {} has fewer than two classes", col.name)));
    }
    let features = FeatureEncoder::fit(train, &[target]);
    let x = features.encode(train);
    let model = fit_model(spec, &x, &y, classes)?;
    Ok(FittedPredictor {
        spec: spec.clone(),
        target,
        classes,
        features,
        model,
    })
}

fn fit_model(spec: &PredictorSpec, x: &Matrix, y: &[usize], classes: usize) -> Result<Model> {
    Ok(match spec.kind {
        PredictorKind::Cart { max_depth, min_leaf } => {
            let opts = TreeOptions {
                max_depth,
                min_leaf,
                max_features: None,
            };
            Model::Tree(Tree::fit(x, y, classes, &opts, spec.seed))
        }
        PredictorKind::RandomForest { trees, max_depth } => {
            let opts = TreeOptions {
                max_depth,
                ..TreeOptions::default()
            };
            Model::Forest(Forest::fit(x, y, classes, trees, &opts, spec.seed))
        }
        PredictorKind::Knn { k } => Model::Knn {
            x: x.clone(),
            y: y.to_vec(),
            k,
        },
        PredictorKind::LinearSvm { lambda, epochs } => Model::Linear(fit_svm(x, y, classes, lambda, epochs, spec.seed)),
        PredictorKind::LogisticRegression { l2, max_iter } => Model::Logistic(
            one_vs_rest(y, classes)
                .map(|t| fit_logistic(x, &t, l2, max_iter))
                .collect(),
        ),
        PredictorKind::Mlp {
            hidden,
            epochs,
            learning_rate,
        } => fit_mlp(x, y, classes, hidden, epochs, learning_rate, spec.seed)?,
    })
}

/// Targets in {0, 1} per class. Binary problems get a single model.
fn one_vs_rest(y: &[usize], classes: usize) -> impl Iterator<Item = Vec<f64>> + '_ {
    let models = if classes == 2 { 1 } else { classes };
    (0..models).map(move |c| {
        let positive = if classes == 2 { 1 } else { c };
        y.iter().map(|&v| f64::from(u8::from(v == positive))).collect()
    })
}

/// Averaged stochastic subgradient descent on the L2-regularized hinge loss.
fn fit_svm(x: &Matrix, y: &[usize], classes: usize, lambda: f64, epochs: usize, seed: u64) -> Vec<Vec<f64>> {
    let d = x.cols;
    let mut order: Vec<usize> = (0..x.rows).collect();
    let mut r = rng::rng(seed);
    one_vs_rest(y, classes)
        .map(|t| {
            let mut w = vec![0.0; d + 1];
            let mut avg = vec![0.0; d + 1];
            let mut step = 0usize;
            for _ in 0..epochs {
                order.shuffle(&mut r);
                for &i in &order {
                    step += 1;
                    let eta = 1.0 / (1.0 + lambda * step as f64);
                    let yi = if t[i] > 0.5 { 1.0 } else { -1.0 };
                    let row = x.row(i);
                    let margin = yi * (w[d] + row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>());
                    for wj in &mut w[..d] {
                        *wj *= 1.0 - eta * lambda;
                    }
                    if margin < 1.0 {
                        for (wj, a) in w[..d].iter_mut().zip(row) {
                            *wj += eta * yi * a;
                        }
                        w[d] += eta * yi;
                    }
                    let k = step as f64;
                    for (a, b) in avg.iter_mut().zip(&w) {
                        *a += (b - *a) / k;
                    }
                }
            }
            avg
        })
        .collect()
}

fn fit_mlp(x: &Matrix, y: &[usize], classes: usize, hidden: usize, epochs: usize, lr: f64, seed: u64) -> Result<Model> {
    let layers = Mlp::from_widths(&[x.cols, hidden, classes], Activation::LeakyRelu(0.01), Activation::Identity)?;
    let mut params = ParamSet::new();
    let mut r = rng::rng(seed);
    let net = Mlp::init("mlp", layers, &mut params, &mut r)?;
    let mut opt = Adam::new(params.num_scalars(), lr, 0.9, 0.999);
    let mut order: Vec<usize> = (0..x.rows).collect();
    let batch = 128;
    for _ in 0..epochs {
        order.shuffle(&mut r);
        for chunk in order.chunks(batch) {
            let xb = x.select(chunk);
            let mut onehot = Tensor::zeros(chunk.len(), classes);
            for (k, &i) in chunk.iter().enumerate() {
                onehot.set(k, y[i], 1.0);
            }
            let mut g = Graph::new();
            let vars = g.params(&params);
            let input = g.input("x", Tensor::new(xb.rows, xb.cols, xb.data)?);
            let logits = net.forward(&mut g, &vars, input)?.output;
            let lp = g.log_softmax(logits);
            let t = g.input("y", onehot);
            let picked = g.mul(t, lp)?;
            let total = g.sum(picked);
            let loss = g.scale(total, -1.0 / chunk.len() as f64);
            let grad = g.backward(loss)?.flatten(&vars);
            opt.step(&mut params, &grad)?;
        }
    }
    Ok(Model::Mlp { net, params })
}

fn knn_proba(x: &Matrix, y: &[usize], k: usize, classes: usize, row: &[f64]) -> Vec<f64> {
    // (distance, index) of the k closest so far, sorted ascending.
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for i in 0..x.rows {
        let d: f64 = x.row(i).iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.len() == k && d >= best[k - 1].0 {
            continue;
        }
        let pos = best.partition_point(|&(bd, _)| bd <= d);
        best.insert(pos, (d, i));
        best.truncate(k);
    }
    let mut votes = vec![0.0; classes];
    for &(_, i) in &best {
        votes[y[i]] += 1.0;
    }
    let n = best.len().max(1) as f64;
    votes.iter_mut().for_each(|v| *v /= n);
    votes
}

fn ovr_to_proba(scores: Vec<f64>, classes: usize) -> Vec<f64> {
    if classes == 2 {
        return vec![1.0 - scores[0], scores[0]];
    }
    let total: f64 = scores.iter().sum();
    if total > 0.0 {
        scores.iter().map(|s| s / total).collect()
    } else {
        vec![1.0 / classes as f64; classes]
    }
}

impl FittedPredictor {
    /// Class probabilities for already-encoded rows.
    pub fn predict_proba_matrix(&self, x: &Matrix) -> Result<Vec<Vec<f64>>> {
        let classes = self.classes;
        Ok(match &self.model {
            Model::Tree(t) => (0..x.rows).map(|i| t.proba(x.row(i)).to_vec()).collect(),
            Model::Forest(f) => (0..x.rows).map(|i| f.proba(x.row(i))).collect(),
            Model::Knn { x: train, y, k } => (0..x.rows).map(|i| knn_proba(train, y, *k, classes, x.row(i))).collect(),
            Model::Linear(ws) => (0..x.rows)
                .map(|i| {
                    let row = x.row(i);
                    let d = row.len();
                    let s: Vec<f64> = ws
                        .iter()
                        .map(|w| {
                            let z = w[d] + row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
                            1.0 / (1.0 + (-z).exp())
                        })
                        .collect();
                    ovr_to_proba(s, classes)
                })
                .collect(),
            Model::Logistic(fits) => (0..x.rows)
                .map(|i| ovr_to_proba(fits.iter().map(|f| f.probability(x.row(i))).collect(), classes))
                .collect(),
            Model::Mlp { net, params } => {
                let mut g = Graph::new();
                let vars = g.params(params);
                let input = g.input("x", Tensor::new(x.rows, x.cols, x.data.clone())?);
                let logits = net.forward(&mut g, &vars, input)?.output;
                let p = g.softmax(logits);
                let v = g.value(p);
                (0..x.rows).map(|i| v.row(i).to_vec()).collect()
            }
        })
    }

    pub fn predict_proba(&self, table: &DataTable) -> Result<Vec<Vec<f64>>> {
        self.predict_proba_matrix(&self.features.encode(table))
    }

    /// Most probable class per row; ties go to the smaller index.
    pub fn predict(&self, table: &DataTable) -> Result<Vec<usize>> {
        Ok(self.predict_proba(table)?.iter().map(|p| argmax(p)).collect())
    }

    /// Fraction of rows of `table` whose target is predicted correctly.
    pub fn accuracy(&self, table: &DataTable) -> Result<f64> {
        if table.is_empty() {
            return Err(Error::EmptyTable);
        }
        let truth = labels(table, self.target)?;
        let pred = self.predict(table)?;
        Ok(pred.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64)
    }
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}
