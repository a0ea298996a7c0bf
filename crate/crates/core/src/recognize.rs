//! Text line recognition over fixed-height strips: a small conv stack that
//! collapses height while preserving width, a bidirectional recurrent layer,
//! and a per-frame class projection. Also the symbol table and edit-distance
//! lexicon matching used at evaluation time.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{FotsError, Result};
use crate::layers::{BiLstmLayer, CbrCache, ConvBnRelu, LinearCache, LinearLayer};
use crate::ops::{
    dropout, dropout_backward, height_max_pool, height_max_pool_backward, log_softmax,
    log_softmax_backward, BiLstmCache,
};
use crate::scalar::Scalar;
use crate::tensor::{Parameter, Tensor};

/// Height every strip must have when it enters the recognition stack.
pub const STRIP_HEIGHT: usize = 8;

/// Ordered symbol table; the class after the last symbol is the CTC
/// separator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharSet {
    symbols: Vec<char>,
}

impl CharSet {
    /// One symbol per line; blank lines are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut symbols = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let mut chars = line.chars();
            let c = chars.next().unwrap();
            if chars.next().is_some() {
                return Err(FotsError::Invalid(format!(
                    "symbol file line {}: expected one character, got {line:?}",
                    lineno + 1
                )));
            }
            if symbols.contains(&c) {
                return Err(FotsError::Invalid(format!(
                    "symbol file line {}: duplicate symbol {c:?}",
                    lineno + 1
                )));
            }
            symbols.push(c);
        }
        if symbols.is_empty() {
            return Err(FotsError::Invalid("symbol file has no symbols".into()));
        }
        Ok(CharSet { symbols })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FotsError::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for &c in &self.symbols {
            s.push(c);
            s.push('\n');
        }
        s
    }

    pub fn num_symbols(&self) -> usize {
        self.symbols.len()
    }

    /// Symbols plus the separator class.
    pub fn num_classes(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn blank(&self) -> usize {
        self.symbols.len()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.symbols
                    .iter()
                    .position(|&s| s == c)
                    .ok_or_else(|| FotsError::Invalid(format!("character {c:?} not in symbol set")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter_map(|&i| self.symbols.get(i))
            .collect()
    }
}

/// Shape of the recognition stack; `in_channels` is whatever feature depth
/// the strips carry.
#[derive(Clone, Debug)]
pub struct RecogArch {
    pub in_channels: usize,
    pub conv_channels: [usize; 3],
    pub hidden: usize,
    pub num_classes: usize,
    pub dropout: f64,
}

/// conv pairs at three widths with height-halving pools between them
/// (8 -> 4 -> 2 -> 1), then bi-LSTM and a per-frame class projection.
#[derive(Clone, Debug)]
pub struct RecognitionNet<T> {
    pub convs: Vec<ConvBnRelu<T>>,
    pub lstm: BiLstmLayer<T>,
    pub fc: LinearLayer<T>,
    pub arch: RecogArch,
}

pub struct RecogCache<T> {
    conv: Vec<CbrCache<T>>,
    pool_in: Vec<Tensor<T>>,
    seq: Tensor<T>,
    lstm: BiLstmCache<T>,
    drop_mask: Tensor<T>,
    fc: LinearCache<T>,
    log_probs: Tensor<T>,
}

/// [1, C, 1, W] -> [W, 1, C]
fn strip_to_seq<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (c, w) = (x.shape()[1], x.shape()[3]);
    let mut out = Tensor::zeros(&[w, 1, c]);
    for ch in 0..c {
        for j in 0..w {
            out.data_mut()[j * c + ch] = x.data()[ch * w + j];
        }
    }
    out
}

/// [W, 1, C] -> [1, C, 1, W]
fn seq_to_strip<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (w, c) = (x.shape()[0], x.shape()[2]);
    let mut out = Tensor::zeros(&[1, c, 1, w]);
    for j in 0..w {
        for ch in 0..c {
            out.data_mut()[ch * w + j] = x.data()[j * c + ch];
        }
    }
    out
}

impl<T: Scalar> RecognitionNet<T> {
    pub fn new(prefix: &str, arch: RecogArch, seed: u64) -> Self {
        let [c1, c2, c3] = arch.conv_channels;
        let plan = [
            (arch.in_channels, c1),
            (c1, c1),
            (c1, c2),
            (c2, c2),
            (c2, c3),
            (c3, c3),
        ];
        let convs = plan
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout))| {
                ConvBnRelu::new(
                    &format!("{prefix}.conv{i}"),
                    cin,
                    cout,
                    3,
                    (1, 1),
                    (1, 1),
                    seed,
                )
            })
            .collect();
        RecognitionNet {
            convs,
            lstm: BiLstmLayer::new(&format!("{prefix}.lstm"), c3, arch.hidden, seed),
            fc: LinearLayer::new(&format!("{prefix}.fc"), arch.hidden, arch.num_classes, seed),
            arch,
        }
    }

    fn check_strip(&self, strip: &Tensor<T>) -> Result<(usize, usize)> {
        let sh = strip.shape();
        if sh.len() != 3 || sh[0] != self.arch.in_channels || sh[1] != STRIP_HEIGHT || sh[2] == 0 {
            return Err(FotsError::Invalid(format!(
                "strip shape {sh:?}, expected [{}, {STRIP_HEIGHT}, width>0]",
                self.arch.in_channels
            )));
        }
        Ok((sh[0], sh[2]))
    }

    /// Per-frame log probabilities [W, num_classes] for one strip.
    pub fn forward_train(
        &mut self,
        strip: &Tensor<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor<T>, RecogCache<T>)> {
        let (c, w) = self.check_strip(strip)?;
        let mut x = Tensor::from_vec(vec![1, c, STRIP_HEIGHT, w], strip.data().to_vec());
        let mut conv_caches = Vec::with_capacity(6);
        let mut pool_in = Vec::with_capacity(3);
        for (i, layer) in self.convs.iter_mut().enumerate() {
            let (y, cache) = layer.forward_train(&x)?;
            conv_caches.push(cache);
            x = y;
            if i % 2 == 1 {
                pool_in.push(x.clone());
                x = height_max_pool(&x)?;
            }
        }
        let seq = strip_to_seq(&x);
        let (h, lstm_cache) = self.lstm.forward(&seq)?;
        let hid = self.arch.hidden;
        let rows = Tensor::from_vec(vec![w, hid], h.into_data());
        let (dropped, mask) = dropout(&rows, self.arch.dropout, rng);
        let (logits, fc_cache) = self.fc.forward(&dropped);
        let log_probs = log_softmax(&logits);
        let cache = RecogCache {
            conv: conv_caches,
            pool_in,
            seq,
            lstm: lstm_cache,
            drop_mask: mask,
            fc: fc_cache,
            log_probs: log_probs.clone(),
        };
        Ok((log_probs, cache))
    }

    pub fn forward_eval(&self, strip: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, w) = self.check_strip(strip)?;
        let mut x = Tensor::from_vec(vec![1, c, STRIP_HEIGHT, w], strip.data().to_vec());
        for (i, layer) in self.convs.iter().enumerate() {
            x = layer.forward_eval(&x)?;
            if i % 2 == 1 {
                x = height_max_pool(&x)?;
            }
        }
        let seq = strip_to_seq(&x);
        let (h, _) = self.lstm.forward(&seq)?;
        let hid = self.arch.hidden;
        let rows = Tensor::from_vec(vec![w, hid], h.into_data());
        let (logits, _) = self.fc.forward(&rows);
        Ok(log_softmax(&logits))
    }

    /// Backprop from log-probability gradients to the strip input,
    /// accumulating parameter gradients.
    pub fn backward(&mut self, cache: &RecogCache<T>, grad_logp: &Tensor<T>) -> Result<Tensor<T>> {
        let g_logits = log_softmax_backward(&cache.log_probs, grad_logp);
        let g_drop = self.fc.backward(&cache.fc, &g_logits);
        let g_rows = dropout_backward(&cache.drop_mask, &g_drop);
        let w = g_rows.shape()[0];
        let hid = self.arch.hidden;
        let g_seq_out = Tensor::from_vec(vec![w, 1, hid], g_rows.into_data());
        let g_seq = self.lstm.backward(&cache.seq, &cache.lstm, &g_seq_out)?;
        let mut g = seq_to_strip(&g_seq);
        for i in (0..self.convs.len()).rev() {
            if i % 2 == 1 {
                g = height_max_pool_backward(&cache.pool_in[i / 2], &g)?;
            }
            g = self.convs[i].backward(&cache.conv[i], &g)?;
        }
        let sh = g.shape().to_vec();
        Ok(Tensor::from_vec(vec![sh[1], sh[2], sh[3]], g.into_data()))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out = Vec::new();
        for layer in &mut self.convs {
            out.extend(layer.params_mut());
        }
        out.extend(self.lstm.params_mut());
        out.extend(self.fc.params_mut());
        out
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for layer in &self.convs {
            out.extend(layer.named());
        }
        out.extend(self.lstm.named());
        out.extend(self.fc.named());
        out
    }

    pub fn load(&mut self, map: &BTreeMap<String, Tensor<T>>) -> Result<()> {
        for layer in &mut self.convs {
            layer.load(map)?;
        }
        self.lstm.load(map)?;
        self.fc.load(map)
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        for (_, t) in self.named() {
            n += t.len();
        }
        n
    }
}

/// Closest lexicon entry by case-insensitive edit distance; ties broken by
/// lexicographic order of the entry. Returns the entry verbatim.
pub fn lexicon_match<'a>(text: &str, lexicon: &'a [String]) -> Option<&'a str> {
    fn lower(s: &str) -> Vec<char> {
        s.chars().flat_map(|c| c.to_lowercase()).collect()
    }
    fn edit_distance(a: &[char], b: &[char]) -> usize {
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        let mut cur = vec![0usize; b.len() + 1];
        for (i, &ca) in a.iter().enumerate() {
            cur[0] = i + 1;
            for (j, &cb) in b.iter().enumerate() {
                let sub = prev[j] + usize::from(ca != cb);
                cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
            }
            std::mem::swap(&mut prev, &mut cur);
        }
        prev[b.len()]
    }
    let query = lower(text);
    let mut best: Option<(usize, &'a str)> = None;
    for entry in lexicon {
        let d = edit_distance(&query, &lower(entry));
        let better = match best {
            None => true,
            Some((bd, be)) => d < bd || (d == bd && entry.as_str() < be),
        };
        if better {
            best = Some((d, entry));
        }
    }
    best.map(|(_, e)| e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn toy_arch(k: usize) -> RecogArch {
        RecogArch {
            in_channels: 3,
            conv_channels: [4, 5, 6],
            hidden: 7,
            num_classes: k,
            dropout: 0.0,
        }
    }

    #[test]
    fn charset_parses_and_round_trips() {
        let cs = CharSet::from_text("a\nb\nc\n").unwrap();
        assert_eq!(cs.num_symbols(), 3);
        assert_eq!(cs.num_classes(), 4);
        assert_eq!(cs.blank(), 3);
        assert_eq!(cs.encode("cab").unwrap(), vec![2, 0, 1]);
        assert_eq!(cs.decode(&[2, 0, 1]), "cab");
        assert_eq!(CharSet::from_text(&cs.to_text()).unwrap(), cs);
    }

    #[test]
    fn charset_rejects_bad_input() {
        assert!(CharSet::from_text("").is_err());
        assert!(CharSet::from_text("ab\n").is_err());
        assert!(CharSet::from_text("a\na\n").is_err());
        let cs = CharSet::from_text("a\nb\n").unwrap();
        assert!(cs.encode("ax").is_err());
    }

    #[test]
    fn forward_emits_normalized_frames() {
        let mut net = RecognitionNet::<f32>::new("rec", toy_arch(5), 11);
        let mut rng = stream(11, "recog-fwd", 0);
        let mut strip = Tensor::<f32>::zeros(&[3, STRIP_HEIGHT, 13]);
        for v in strip.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let (lp, _) = net.forward_train(&strip, &mut rng).unwrap();
        assert_eq!(lp.shape(), &[13, 5]);
        for t in 0..13 {
            let row = &lp.data()[t * 5..(t + 1) * 5];
            let z: f32 = row.iter().map(|v| v.exp()).sum();
            assert!((z - 1.0).abs() < 1e-4, "frame {t} mass {z}");
        }
    }

    #[test]
    fn width_is_preserved_for_any_input_width() {
        let mut net = RecognitionNet::<f32>::new("rec", toy_arch(4), 3);
        let mut rng = stream(3, "recog-width", 0);
        for w in [1usize, 2, 5, 19] {
            let strip = Tensor::<f32>::full(&[3, STRIP_HEIGHT, w], 0.3);
            let (lp, _) = net.forward_train(&strip, &mut rng).unwrap();
            assert_eq!(lp.shape(), &[w, 4]);
        }
    }

    #[test]
    fn rejects_wrong_strip_height() {
        let mut net = RecognitionNet::<f32>::new("rec", toy_arch(4), 3);
        let mut rng = stream(4, "recog-h", 0);
        let strip = Tensor::<f32>::zeros(&[3, 4, 9]);
        assert!(net.forward_train(&strip, &mut rng).is_err());
    }

    #[test]
    fn same_seed_same_outputs() {
        let arch = toy_arch(6);
        let mut a = RecognitionNet::<f32>::new("rec", arch.clone(), 21);
        let mut b = RecognitionNet::<f32>::new("rec", arch, 21);
        let strip = Tensor::<f32>::full(&[3, STRIP_HEIGHT, 7], 0.25);
        let la = a.forward_train(&strip, &mut stream(1, "d", 0)).unwrap().0;
        let lb = b.forward_train(&strip, &mut stream(1, "d", 0)).unwrap().0;
        assert_eq!(la.data(), lb.data());
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let arch = RecogArch {
            in_channels: 2,
            conv_channels: [3, 3, 4],
            hidden: 3,
            num_classes: 4,
            dropout: 0.0,
        };
        let mut net = RecognitionNet::<f64>::new("rec", arch, 9);
        let mut rng = stream(9, "recog-grad", 0);
        let mut strip = Tensor::<f64>::zeros(&[2, STRIP_HEIGHT, 5]);
        for v in strip.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let weights: Vec<f64> = (0..5 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, cache) = net
            .forward_train(&strip, &mut stream(9, "recog-drop", 0))
            .unwrap();
        let gout = Tensor::from_vec(vec![5, 4], weights.clone());
        let analytic = net.backward(&cache, &gout).unwrap();
        let mut f = |x: &Tensor<f64>| -> f64 {
            let (lp, _) = net
                .forward_train(x, &mut stream(9, "recog-drop", 0))
                .unwrap();
            lp.data().iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let numeric = crate::gradcheck::finite_diff(&mut f, &strip, 1e-5);
        let report = crate::gradcheck::compare_grads(&analytic, &numeric);
        assert!(
            report.max_rel_err < 1e-4,
            "max rel err {} at {}",
            report.max_rel_err,
            report.worst_index
        );
    }

    #[test]
    fn lexicon_match_rules() {
        let lex: Vec<String> = ["Apple", "apply", "Banana"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(lexicon_match("apple", &lex), Some("Apple"));
        assert_eq!(lexicon_match("APPLY", &lex), Some("apply"));
        // distance 1 to both Apple and apply: tie goes to "Apple"
        assert_eq!(lexicon_match("appl", &lex), Some("Apple"));
        assert_eq!(lexicon_match("banan", &lex), Some("Banana"));
        assert_eq!(lexicon_match("x", &[]), None);
    }
}
