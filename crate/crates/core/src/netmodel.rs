//! Layered models, compression schemes and the on-disk weight format.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{Container, Entry};
use crate::error::{Error, Result};
use crate::lowrank::{self, Factorization, TruncatedPair};
use crate::matrix::Matrix;

pub const MODEL_MAGIC: [u8; 4] = *b"LRFM";
pub const FLAG_SEARCHABLE: u8 = 0b01;
pub const FLAG_FACTORED: u8 = 0b10;

/// One weight matrix. A layer maps a row vector of length `m` to one of length `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub weights: Matrix,
    pub searchable: bool,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, weights: Matrix, searchable: bool) -> Self {
        Self { name: name.into(), weights, searchable }
    }

    pub fn max_rank(&self) -> usize {
        self.weights.rows().min(self.weights.cols())
    }

    pub fn dense_cost(&self) -> usize {
        self.weights.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayeredModel {
    layers: Vec<LayerSpec>,
    pub metadata: BTreeMap<String, String>,
}

impl LayeredModel {
    pub fn new(layers: Vec<LayerSpec>, metadata: BTreeMap<String, String>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ModelShape("a model needs at least one layer".into()));
        }
        let mut seen = HashSet::new();
        for layer in &layers {
            if layer.name.is_empty() {
                return Err(Error::ModelShape("empty layer name".into()));
            }
            if !seen.insert(layer.name.as_str()) {
                return Err(Error::ModelShape(format!("duplicate layer name `{}`", layer.name)));
            }
            if layer.weights.is_empty() {
                return Err(Error::ModelShape(format!("layer `{}` has an empty matrix", layer.name)));
            }
            if !layer.weights.is_finite() {
                return Err(Error::InvalidMatrix(format!("layer `{}` has a non-finite entry", layer.name)));
            }
        }
        Ok(Self { layers, metadata })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Indices (into `layers()`) of the searchable layers, in order.
    pub fn searchable_indices(&self) -> Vec<usize> {
        self.layers.iter().enumerate().filter(|(_, l)| l.searchable).map(|(i, _)| i).collect()
    }

    pub fn searchable_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().filter(|l| l.searchable)
    }

    pub fn num_searchable(&self) -> usize {
        self.searchable_layers().count()
    }

    pub fn dense_cost(&self) -> usize {
        self.layers.iter().map(LayerSpec::dense_cost).sum()
    }

    /// A copy in which exactly the named layers are searchable.
    pub fn with_searchable<S: AsRef<str>>(&self, names: &[S]) -> Result<LayeredModel> {
        if let Some(unknown) = names.iter().find(|n| self.layer(n.as_ref()).is_none()) {
            return Err(Error::UnknownLayer(unknown.as_ref().to_string()));
        }
        let layers = self
            .layers
            .iter()
            .map(|l| LayerSpec { searchable: names.iter().any(|n| n.as_ref() == l.name), ..l.clone() })
            .collect();
        LayeredModel::new(layers, self.metadata.clone())
    }

    pub fn identity_scheme(&self) -> Scheme {
        Scheme::new(vec![0; self.num_searchable()])
    }

    pub fn validate_scheme(&self, scheme: &Scheme) -> Result<()> {
        let expected = self.num_searchable();
        if scheme.len() != expected {
            return Err(Error::InvalidScheme(format!(
                "scheme has {} entries but the model has {expected} searchable layers",
                scheme.len()
            )));
        }
        for (layer, &k) in self.searchable_layers().zip(scheme.ranks()) {
            if k > layer.max_rank() {
                return Err(Error::InvalidRank { context: format!("layer `{}`", layer.name), rank: k, max: layer.max_rank() });
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_container().to_bytes()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let container = Container::from_bytes(bytes, MODEL_MAGIC)?;
        let mut layers = Vec::with_capacity(container.entries.len());
        for e in container.entries {
            if e.flags & FLAG_FACTORED != 0 {
                return Err(Error::format(0, format!("entry `{}` is a factored pair member; load it as a compressed model", e.name)));
            }
            layers.push(LayerSpec { name: e.name, weights: e.matrix, searchable: e.flags & FLAG_SEARCHABLE != 0 });
        }
        Self::new(layers, container.metadata)
    }

    fn to_container(&self) -> Container {
        let mut c = Container::new(MODEL_MAGIC);
        c.entries = self
            .layers
            .iter()
            .map(|l| Entry { name: l.name.clone(), flags: if l.searchable { FLAG_SEARCHABLE } else { 0 }, matrix: l.weights.clone() })
            .collect();
        c.metadata = self.metadata.clone();
        c
    }
}

pub fn save_model(model: &LayeredModel, path: impl AsRef<Path>) -> Result<()> {
    model.save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LayeredModel> {
    LayeredModel::load(path)
}

/// One rank per searchable layer; 0 leaves the layer dense.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Scheme(Vec<usize>);

impl Scheme {
    pub fn new(ranks: Vec<usize>) -> Self {
        Self(ranks)
    }

    pub fn ranks(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().all(|&k| k == 0)
    }
}

impl From<Vec<usize>> for Scheme {
    fn from(ranks: Vec<usize>) -> Self {
        Self(ranks)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CompressedLayer {
    Dense { name: String, weights: Matrix, searchable: bool },
    Factored { name: String, pair: TruncatedPair, searchable: bool },
}

impl CompressedLayer {
    pub fn name(&self) -> &str {
        match self {
            CompressedLayer::Dense { name, .. } | CompressedLayer::Factored { name, .. } => name,
        }
    }

    pub fn searchable(&self) -> bool {
        match self {
            CompressedLayer::Dense { searchable, .. } | CompressedLayer::Factored { searchable, .. } => *searchable,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            CompressedLayer::Dense { weights, .. } => weights.shape(),
            CompressedLayer::Factored { pair, .. } => (pair.u_trunc.rows(), pair.v_star.cols()),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            CompressedLayer::Dense { weights, .. } => weights.len(),
            CompressedLayer::Factored { pair, .. } => pair.param_count(),
        }
    }

    /// The matrices applied in sequence: one for dense layers, `U'` then `V*` for factored ones.
    pub fn factors(&self) -> Vec<&Matrix> {
        match self {
            CompressedLayer::Dense { weights, .. } => vec![weights],
            CompressedLayer::Factored { pair, .. } => vec![&pair.u_trunc, &pair.v_star],
        }
    }

    pub(crate) fn factors_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            CompressedLayer::Dense { weights, .. } => vec![weights],
            CompressedLayer::Factored { pair, .. } => vec![&mut pair.u_trunc, &mut pair.v_star],
        }
    }

    pub fn dense_weights(&self) -> Matrix {
        match self {
            CompressedLayer::Dense { weights, .. } => weights.clone(),
            CompressedLayer::Factored { pair, .. } => pair.product(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedModel {
    pub layers: Vec<CompressedLayer>,
    pub metadata: BTreeMap<String, String>,
}

impl CompressedModel {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(CompressedLayer::param_count).sum()
    }

    /// The rank of every searchable layer, 0 for those left dense.
    pub fn searchable_ranks(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter(|l| l.searchable())
            .map(|l| match l {
                CompressedLayer::Dense { .. } => 0,
                CompressedLayer::Factored { pair, .. } => pair.rank(),
            })
            .collect()
    }

    /// Multiplies every factored pair back into a dense matrix.
    pub fn densify(&self) -> Result<LayeredModel> {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerSpec::new(l.name(), l.dense_weights(), l.searchable()))
            .collect();
        LayeredModel::new(layers, self.metadata.clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut c = Container::new(MODEL_MAGIC);
        for layer in &self.layers {
            match layer {
                CompressedLayer::Dense { name, weights, searchable } => c.entries.push(Entry {
                    name: name.clone(),
                    flags: if *searchable { FLAG_SEARCHABLE } else { 0 },
                    matrix: weights.clone(),
                }),
                CompressedLayer::Factored { name, pair, searchable } => {
                    let flags = FLAG_FACTORED | if *searchable { FLAG_SEARCHABLE } else { 0 };
                    c.entries.push(Entry { name: format!("{name}.u"), flags, matrix: pair.u_trunc.clone() });
                    c.entries.push(Entry { name: format!("{name}.v"), flags, matrix: pair.v_star.clone() });
                }
            }
        }
        c.metadata = self.metadata.clone();
        c.to_bytes()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Accepts both plain and compressed model files.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let container = Container::from_bytes(bytes, MODEL_MAGIC)?;
        let mut layers = Vec::new();
        let mut entries = container.entries.into_iter();
        while let Some(e) = entries.next() {
            let searchable = e.flags & FLAG_SEARCHABLE != 0;
            if e.flags & FLAG_FACTORED == 0 {
                layers.push(CompressedLayer::Dense { name: e.name, weights: e.matrix, searchable });
                continue;
            }
            let base = e
                .name
                .strip_suffix(".u")
                .ok_or_else(|| Error::format(0, format!("factored entry `{}` must end in .u", e.name)))?
                .to_string();
            let v = entries
                .next()
                .filter(|v| v.flags & FLAG_FACTORED != 0 && v.name == format!("{base}.v"))
                .ok_or_else(|| Error::format(0, format!("factored entry `{}` has no matching .v", e.name)))?;
            if e.matrix.cols() != v.matrix.rows() {
                return Err(Error::format(0, format!("factor pair `{base}` has inconsistent inner rank")));
            }
            layers.push(CompressedLayer::Factored {
                name: base,
                pair: TruncatedPair { u_trunc: e.matrix, v_star: v.matrix },
                searchable,
            });
        }
        Ok(Self { layers, metadata: container.metadata })
    }
}

impl From<&LayeredModel> for CompressedModel {
    fn from(model: &LayeredModel) -> Self {
        let layers = model
            .layers
            .iter()
            .map(|l| CompressedLayer::Dense { name: l.name.clone(), weights: l.weights.clone(), searchable: l.searchable })
            .collect();
        Self { layers, metadata: model.metadata.clone() }
    }
}

/// SVDs of every searchable layer, computed once so that many schemes can be applied cheaply.
#[derive(Debug, Clone)]
pub struct ModelFactors {
    factors: Vec<Option<Factorization>>,
}

impl ModelFactors {
    pub fn new(model: &LayeredModel) -> Result<Self> {
        let factors = model
            .layers
            .iter()
            .map(|l| if l.searchable { lowrank::svd(&l.weights).map(Some) } else { Ok(None) })
            .collect::<Result<_>>()?;
        Ok(Self { factors })
    }

    /// Singular values of every searchable layer, in searchable order.
    pub fn spectra(&self) -> Vec<&[f64]> {
        self.factors.iter().flatten().map(|f| f.sigma.as_slice()).collect()
    }

    pub fn get(&self, layer_index: usize) -> Option<&Factorization> {
        self.factors.get(layer_index).and_then(Option::as_ref)
    }
}

pub fn apply_scheme(model: &LayeredModel, scheme: &Scheme) -> Result<CompressedModel> {
    model.validate_scheme(scheme)?;
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut ranks = scheme.ranks().iter();
    for layer in &model.layers {
        let k = if layer.searchable { *ranks.next().expect("validated length") } else { 0 };
        layers.push(compress_layer(layer, k, || lowrank::svd(&layer.weights))?);
    }
    Ok(CompressedModel { layers, metadata: model.metadata.clone() })
}

/// Same result as [`apply_scheme`], reusing precomputed factorizations.
pub fn apply_scheme_with(model: &LayeredModel, factors: &ModelFactors, scheme: &Scheme) -> Result<CompressedModel> {
    model.validate_scheme(scheme)?;
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut ranks = scheme.ranks().iter();
    for (i, layer) in model.layers.iter().enumerate() {
        let k = if layer.searchable { *ranks.next().expect("validated length") } else { 0 };
        layers.push(compress_layer(layer, k, || {
            factors.get(i).cloned().ok_or_else(|| Error::ModelShape(format!("no factorization for layer `{}`", layer.name)))
        })?);
    }
    Ok(CompressedModel { layers, metadata: model.metadata.clone() })
}

fn compress_layer(layer: &LayerSpec, k: usize, factorize: impl FnOnce() -> Result<Factorization>) -> Result<CompressedLayer> {
    if k == 0 {
        return Ok(CompressedLayer::Dense { name: layer.name.clone(), weights: layer.weights.clone(), searchable: layer.searchable });
    }
    let f = factorize()?;
    let pair = lowrank::truncate(&f, k).map_err(|e| e.context(format!("layer `{}`", layer.name)))?;
    Ok(CompressedLayer::Factored { name: layer.name.clone(), pair, searchable: layer.searchable })
}

/// Whole-model multiply-accumulate ratio of the dense model to the model compressed by `scheme`.
pub fn scheme_speedup(model: &LayeredModel, scheme: &Scheme) -> Result<f64> {
    Ok(model.dense_cost() as f64 / scheme_cost(model, scheme)? as f64)
}

pub fn scheme_cost(model: &LayeredModel, scheme: &Scheme) -> Result<usize> {
    model.validate_scheme(scheme)?;
    let mut ranks = scheme.ranks().iter();
    Ok(model
        .layers
        .iter()
        .map(|l| {
            let k = if l.searchable { *ranks.next().expect("validated length") } else { 0 };
            lowrank::layer_cost(l.weights.rows(), l.weights.cols(), k)
        })
        .sum())
}
