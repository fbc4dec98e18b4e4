//! JSON document for networks: the spec plus flat row-major weight arrays,
//! each weight written with 17 significant digits.

use serde::ser::{Error as _, SerializeSeq};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use super::layers::{
    AttentionHead, EmbeddingLayer, FeedForward, FeedForwardLayer, GeneralizedFeedForwardLayer,
    Matrix, ProjectionLayer, SelfAttentionLayer, Vector,
};
use super::network::{Block, NetworkKind, TransformerNetwork};
use super::ArchSpec;
use crate::error::{Error, Result};

const FORMAT: &str = "transformer-network/1";

fn write_digits<S: Serializer>(data: &[f64], ser: S) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = ser.serialize_seq(Some(data.len()))?;
    for v in data {
        if !v.is_finite() {
            return Err(S::Error::custom("non-finite weight"));
        }
        let raw = RawValue::from_string(format!("{v:.16e}")).map_err(S::Error::custom)?;
        seq.serialize_element(&raw)?;
    }
    seq.end()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    #[serde(serialize_with = "write_digits")]
    pub data: Vec<f64>,
}

impl Dense {
    fn from_matrix(m: &Matrix) -> Self {
        Self { rows: m.nrows(), cols: m.ncols(), data: m.iter().copied().collect() }
    }

    fn from_vector(v: &Vector) -> Self {
        Self { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    fn matrix(&self) -> Result<Matrix> {
        Matrix::from_shape_vec((self.rows, self.cols), self.data.clone())
            .map_err(|e| Error::Shape(format!("dense array: {e}")))
    }

    fn vector(&self) -> Result<Vector> {
        if self.cols != 1 || self.data.len() != self.rows {
            return Err(Error::Shape("expected a column vector".into()));
        }
        Ok(Vector::from(self.data.clone()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadDocument {
    pub w_v: Dense,
    pub w_k: Dense,
    pub w_q: Dense,
    pub w_o: Dense,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedForwardDocument {
    pub generalized: bool,
    pub w1: Dense,
    pub b1: Dense,
    pub w2: Dense,
    pub b2: Dense,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockDocument {
    pub attention: Option<Vec<HeadDocument>>,
    pub feed_forward: FeedForwardDocument,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDocument {
    pub format: String,
    pub spec: ArchSpec,
    pub kind: NetworkKind,
    pub e_in: Dense,
    pub p: Dense,
    pub blocks: Vec<BlockDocument>,
    pub e_out: Dense,
}

impl From<&TransformerNetwork> for NetworkDocument {
    fn from(net: &TransformerNetwork) -> Self {
        let blocks = net
            .blocks()
            .iter()
            .map(|b| BlockDocument {
                attention: b.attention.as_ref().map(|a| {
                    a.heads()
                        .iter()
                        .map(|h| HeadDocument {
                            w_v: Dense::from_matrix(&h.w_v),
                            w_k: Dense::from_matrix(&h.w_k),
                            w_q: Dense::from_matrix(&h.w_q),
                            w_o: Dense::from_matrix(&h.w_o),
                        })
                        .collect()
                }),
                feed_forward: match &b.ff {
                    FeedForward::Standard(f) => FeedForwardDocument {
                        generalized: false,
                        w1: Dense::from_matrix(&f.w1),
                        b1: Dense::from_vector(&f.b1),
                        w2: Dense::from_matrix(&f.w2),
                        b2: Dense::from_vector(&f.b2),
                    },
                    FeedForward::Generalized(g) => FeedForwardDocument {
                        generalized: true,
                        w1: Dense::from_matrix(&g.w1),
                        b1: Dense::from_matrix(&g.b1),
                        w2: Dense::from_matrix(&g.w2),
                        b2: Dense::from_matrix(&g.b2),
                    },
                },
            })
            .collect();
        Self {
            format: FORMAT.into(),
            spec: *net.spec(),
            kind: net.kind(),
            e_in: Dense::from_matrix(&net.embedding().e_in),
            p: Dense::from_matrix(&net.embedding().p),
            blocks,
            e_out: Dense::from_matrix(&net.projection().e_out),
        }
    }
}

impl NetworkDocument {
    pub fn into_network(self) -> Result<TransformerNetwork> {
        if self.format != FORMAT {
            return Err(Error::InvalidParam(format!("unknown network format {:?}", self.format)));
        }
        let embedding = EmbeddingLayer::new(self.e_in.matrix()?, self.p.matrix()?)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in self.blocks {
            let attention = match b.attention {
                Some(heads) => Some(SelfAttentionLayer::new(
                    heads
                        .iter()
                        .map(|h| AttentionHead::new(h.w_v.matrix()?, h.w_k.matrix()?, h.w_q.matrix()?, h.w_o.matrix()?))
                        .collect::<Result<Vec<_>>>()?,
                )?),
                None => None,
            };
            let f = b.feed_forward;
            let ff = if f.generalized {
                FeedForward::Generalized(GeneralizedFeedForwardLayer::new(
                    f.w1.matrix()?,
                    f.b1.matrix()?,
                    f.w2.matrix()?,
                    f.b2.matrix()?,
                )?)
            } else {
                FeedForward::Standard(FeedForwardLayer::new(f.w1.matrix()?, f.b1.vector()?, f.w2.matrix()?, f.b2.vector()?)?)
            };
            blocks.push(Block { attention, ff });
        }
        let net = TransformerNetwork::with_spec(self.spec, embedding, blocks, ProjectionLayer::new(self.e_out.matrix()?))?;
        if net.kind() != self.kind {
            return Err(Error::InvalidParam("declared kind does not match layers".into()));
        }
        Ok(net)
    }
}

impl TransformerNetwork {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&NetworkDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<NetworkDocument>(text)?.into_network()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = ArchSpec::new(2, 1, 3, 4, 2, 2, 5, 2).unwrap();
        let net = TransformerNetwork::random(spec, 0.7, 5).unwrap();
        let back = TransformerNetwork::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn weights_use_seventeen_digits() {
        let spec = ArchSpec::new(1, 1, 1, 1, 1, 1, 1, 1).unwrap();
        let text = TransformerNetwork::random(spec, 1.0, 1).unwrap().to_json().unwrap();
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        let raw = text.split("\"data\":[").nth(1).unwrap().split(']').next().unwrap();
        let mantissa = raw.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
        assert_eq!(mantissa.len(), 17);
        assert_eq!(doc["format"], FORMAT);
    }

    #[test]
    fn unknown_format_rejected() {
        let spec = ArchSpec::new(1, 1, 1, 1, 1, 1, 1, 1).unwrap();
        let mut doc = NetworkDocument::from(&TransformerNetwork::random(spec, 1.0, 1).unwrap());
        doc.format = "other".into();
        assert!(doc.into_network().is_err());
    }
}
