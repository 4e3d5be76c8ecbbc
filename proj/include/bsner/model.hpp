#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "bsner/targets.hpp"
#include "bsner/tensor.hpp"

namespace bsner {

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  int vocab_size = 0;
  int embed_dim = 100;
  int lstm_hidden = 200;
  double lstm_dropout = 0.5;
  int affine_hidden = 150;  // the paper-style d
  double affine_dropout = 0.2;
  int width_embed_dim = 25;
  int max_width = 64;  // spans with j - i >= max_width are not candidates
  int type_count = 0;  // c, non-entity included

  void validate() const {
    if (vocab_size <= 0 || embed_dim <= 0 || lstm_hidden <= 0 || affine_hidden <= 0 ||
        width_embed_dim <= 0 || max_width <= 0 || type_count < 2)
      throw ModelError("ModelConfig: all dimensions must be positive (c >= 2)");
    if (lstm_dropout < 0 || lstm_dropout >= 1 || affine_dropout < 0 || affine_dropout >= 1)
      throw ModelError("ModelConfig: dropout rates must be in [0, 1)");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Candidate spans of a length-T sentence: the upper triangle, row-major,
// excluding spans at or beyond max_width.
inline std::vector<SpanIndex> candidate_spans(int t_len, int max_width) {
  std::vector<SpanIndex> spans;
  for (int i = 0; i < t_len; ++i)
    for (int j = i; j < t_len && j - i < max_width; ++j) spans.push_back({i, j});
  return spans;
}

// Token embeddings + one-layer BiLSTM + two affine heads + biaffine span
// scorer. Templated on scalar so the gradient checker can run in double.
template <class S>
struct ModelT {
  ModelConfig cfg;

  TensorPtrT<S> embed;                          // (V, e)
  TensorPtrT<S> fw_wx, fw_wh, fw_b;             // (e,4h), (h,4h), (4h)
  TensorPtrT<S> bw_wx, bw_wh, bw_b;
  TensorPtrT<S> start_w, start_b;               // (2h,d), (d)
  TensorPtrT<S> end_w, end_b;
  TensorPtrT<S> biaffine_u;                     // (d, c, d)
  TensorPtrT<S> biaffine_w;                     // (c, 2d+dw)
  TensorPtrT<S> biaffine_b;                     // (c)
  TensorPtrT<S> width_embed;                    // (max_width, dw)

  explicit ModelT(ModelConfig config) : cfg(std::move(config)) {
    cfg.validate();
    const int e = cfg.embed_dim, h = cfg.lstm_hidden, d = cfg.affine_hidden;
    const int dw = cfg.width_embed_dim, c = cfg.type_count;
    auto mk = [](std::vector<int> shp) { return TensorT<S>::zeros(std::move(shp), true); };
    embed = mk({cfg.vocab_size, e});
    fw_wx = mk({e, 4 * h});
    fw_wh = mk({h, 4 * h});
    fw_b = mk({4 * h});
    bw_wx = mk({e, 4 * h});
    bw_wh = mk({h, 4 * h});
    bw_b = mk({4 * h});
    start_w = mk({2 * h, d});
    start_b = mk({d});
    end_w = mk({2 * h, d});
    end_b = mk({d});
    biaffine_u = mk({d, c, d});
    biaffine_w = mk({c, 2 * d + dw});
    biaffine_b = mk({c});
    width_embed = mk({cfg.max_width, dw});
  }

  std::vector<std::pair<std::string, TensorPtrT<S>>> named_params() {
    return {{"embed", embed},
            {"lstm.fw.wx", fw_wx},
            {"lstm.fw.wh", fw_wh},
            {"lstm.fw.b", fw_b},
            {"lstm.bw.wx", bw_wx},
            {"lstm.bw.wh", bw_wh},
            {"lstm.bw.b", bw_b},
            {"head.start.w", start_w},
            {"head.start.b", start_b},
            {"head.end.w", end_w},
            {"head.end.b", end_b},
            {"biaffine.u", biaffine_u},
            {"biaffine.w", biaffine_w},
            {"biaffine.b", biaffine_b},
            {"width_embed", width_embed}};
  }

  // Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) per tensor, in named_params
  // order; the LSTM forget-gate bias slice then gets +1. Consumes draws from
  // the shared PRNG in this documented order.
  void init(Rng& rng) {
    const int h = cfg.lstm_hidden;
    auto fill = [&rng](TensorPtrT<S>& t, int fan_in) {
      const double bound = std::sqrt(1.0 / fan_in);
      for (auto& v : t->data) v = static_cast<S>(rng.uniform(-bound, bound));
    };
    fill(embed, cfg.embed_dim);
    fill(fw_wx, cfg.embed_dim);
    fill(fw_wh, h);
    fill(fw_b, h);
    fill(bw_wx, cfg.embed_dim);
    fill(bw_wh, h);
    fill(bw_b, h);
    fill(start_w, 2 * h);
    fill(start_b, 2 * h);
    fill(end_w, 2 * h);
    fill(end_b, 2 * h);
    fill(biaffine_u, cfg.affine_hidden);
    fill(biaffine_w, 2 * cfg.affine_hidden + cfg.width_embed_dim);
    fill(biaffine_b, 2 * cfg.affine_hidden + cfg.width_embed_dim);
    fill(width_embed, cfg.width_embed_dim);
    // Gate layout is (input, forget, cell, output); bias the forget gate.
    for (int k = h; k < 2 * h; ++k) {
      fw_b->data[k] += S(1);
      bw_b->data[k] += S(1);
    }
  }

  // BiLSTM encoding: H = [forward states ; backward states] per token,
  // shape (T, 2h). Dropout on embeddings and on H in train mode.
  TensorPtrT<S> encode(GraphT<S>& g, const std::vector<int>& ids, bool train, Rng& rng) {
    if (ids.empty()) throw ModelError("encode: empty sentence");
    const int t_len = static_cast<int>(ids.size());
    const int h = cfg.lstm_hidden;
    auto emb = embedding(g, embed, ids);
    emb = dropout(g, emb, cfg.lstm_dropout, rng, train);

    auto run_dir = [&](TensorPtrT<S>& wx, TensorPtrT<S>& wh, TensorPtrT<S>& b,
                       bool reverse) {
      auto xw = matmul(g, emb, wx);  // (T, 4h)
      std::vector<TensorPtrT<S>> states(t_len);
      TensorPtrT<S> h_prev = TensorT<S>::zeros({h});
      TensorPtrT<S> c_prev = TensorT<S>::zeros({h});
      for (int step = 0; step < t_len; ++step) {
        int t = reverse ? t_len - 1 - step : step;
        auto gates = add(g, add(g, row(g, xw, t), matmul(g, h_prev, wh)), b);
        auto gate_i = vsigmoid(g, slice_cols(g, gates, 0, h));
        auto gate_f = vsigmoid(g, slice_cols(g, gates, h, h));
        auto gate_g = vtanh(g, slice_cols(g, gates, 2 * h, h));
        auto gate_o = vsigmoid(g, slice_cols(g, gates, 3 * h, h));
        auto c_t = add(g, mul(g, gate_f, c_prev), mul(g, gate_i, gate_g));
        auto h_t = mul(g, gate_o, vtanh(g, c_t));
        states[t] = h_t;
        h_prev = h_t;
        c_prev = c_t;
      }
      return stack_rows(g, states);
    };
    auto fw = run_dir(fw_wx, fw_wh, fw_b, false);
    auto bw = run_dir(bw_wx, bw_wh, bw_b, true);
    auto out = concat_cols(g, {fw, bw});
    return dropout(g, out, cfg.lstm_dropout, rng, train);
  }

  // Start/end head representations, each (T, d): tanh(H W + b) with dropout.
  std::pair<TensorPtrT<S>, TensorPtrT<S>> span_heads(GraphT<S>& g, TensorPtrT<S> enc,
                                                     bool train, Rng& rng) {
    auto hs = vtanh(g, add_rowvec(g, matmul(g, enc, start_w), start_b));
    auto he = vtanh(g, add_rowvec(g, matmul(g, enc, end_w), end_b));
    hs = dropout(g, hs, cfg.affine_dropout, rng, train);
    he = dropout(g, he, cfg.affine_dropout, rng, train);
    return {hs, he};
  }

  // Span logits r_ij for the given candidates, shape (S, c):
  //   r_ij = (hs_i)^T U he_j + W (hs_i (+) he_j (+) w_{j-i}) + b.
  // The affine term is decomposed through column blocks of W.
  TensorPtrT<S> span_logits(GraphT<S>& g, TensorPtrT<S> hs, TensorPtrT<S> he,
                            const std::vector<SpanIndex>& spans) {
    const int d = cfg.affine_hidden, dw = cfg.width_embed_dim;
    auto bil = bilinear_scores(g, hs, biaffine_u, he);
    auto p = matmul_nt(g, hs, slice_cols(g, biaffine_w, 0, d));        // (T, c)
    auto q = matmul_nt(g, he, slice_cols(g, biaffine_w, d, d));        // (T, c)
    auto wd = matmul_nt(g, width_embed, slice_cols(g, biaffine_w, 2 * d, dw));
    return assemble_span_logits(g, bil, p, q, wd, biaffine_b, spans);
  }

  // Per-sentence loss: sum over candidate spans of the soft cross entropy
  // between softmax(r_ij) and the target cell.
  TensorPtrT<S> sentence_loss(GraphT<S>& g, const std::vector<int>& ids,
                              const TargetMatrix& targets, bool train, Rng& rng) {
    const int t_len = static_cast<int>(ids.size());
    if (targets.T != t_len || targets.c != cfg.type_count)
      throw ModelError("sentence_loss: target matrix does not match sentence/model");
    auto spans = candidate_spans(t_len, cfg.max_width);
    auto enc = encode(g, ids, train, rng);
    auto [hs, he] = span_heads(g, enc, train, rng);
    auto logits = span_logits(g, hs, he, spans);
    auto probs = softmax_rows(g, logits);
    auto tgt = TensorT<S>::zeros({static_cast<int>(spans.size()), cfg.type_count});
    for (std::size_t s = 0; s < spans.size(); ++s) {
      const double* cell = targets.cell(spans[s].start, spans[s].end);
      for (int t = 0; t < cfg.type_count; ++t)
        tgt->data[s * cfg.type_count + t] = static_cast<S>(cell[t]);
    }
    return cross_entropy(g, probs, tgt);
  }

  // Eval-mode predicted probabilities for every candidate span. Non-candidate
  // cells (width overflow) stay at non-entity probability 1.
  TargetMatrix predict_probs(const std::vector<int>& ids, Rng& rng) {
    GraphT<S> g;
    const int t_len = static_cast<int>(ids.size());
    auto spans = candidate_spans(t_len, cfg.max_width);
    auto enc = encode(g, ids, false, rng);
    auto [hs, he] = span_heads(g, enc, false, rng);
    auto logits = span_logits(g, hs, he, spans);
    auto probs = softmax_rows(g, logits);
    TargetMatrix out(t_len, cfg.type_count);
    for (int i = 0; i < t_len; ++i)
      for (int j = i; j < t_len; ++j) out.cell(i, j)[0] = 1.0f;
    for (std::size_t s = 0; s < spans.size(); ++s) {
      double* cell = out.cell(spans[s].start, spans[s].end);
      for (int t = 0; t < cfg.type_count; ++t)
        cell[t] = static_cast<double>(probs->data[s * cfg.type_count + t]);
    }
    return out;
  }
};

using Model = ModelT<float>;

// Deep copy of parameter values into a same-config model.
template <class S>
ModelT<S> clone_model(ModelT<S>& src) {
  ModelT<S> dst(src.cfg);
  auto a = src.named_params();
  auto b = dst.named_params();
  for (std::size_t k = 0; k < a.size(); ++k) b[k].second->data = a[k].second->data;
  return dst;
}

// Cast a model to another scalar type (used by the double-precision checker).
template <class To, class From>
ModelT<To> cast_model(ModelT<From>& src) {
  ModelT<To> dst(src.cfg);
  auto a = src.named_params();
  auto b = dst.named_params();
  for (std::size_t k = 0; k < a.size(); ++k) {
    auto& out = b[k].second->data;
    const auto& in = a[k].second->data;
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = static_cast<To>(in[i]);
  }
  return dst;
}

}  // namespace bsner
