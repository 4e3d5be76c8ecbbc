#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "bsner/checkpoint.hpp"
#include "bsner/decode.hpp"
#include "bsner/model.hpp"
#include "bsner/targets.hpp"

namespace bsner {

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class TargetMode { kHard, kBoundarySmooth, kLabelSmooth };

struct TrainConfig {
  int epochs = 50;
  int batch_size = 48;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double warmup_fraction = 0.2;
  double clip_norm = 5.0;
  std::uint64_t seed = 42;
  TargetMode target_mode = TargetMode::kHard;
  double epsilon = 0.1;    // boundary smoothing mass
  int smooth_size = 1;     // boundary smoothing D
  double alpha = 0.1;      // label smoothing
  RingShare ring_share = RingShare::kValidMembers;

  void validate() const {
    if (epochs < 0 || batch_size < 1) throw TrainError("TrainConfig: bad epochs/batch_size");
    if (warmup_fraction <= 0 || warmup_fraction >= 1)
      throw TrainError("TrainConfig: warmup_fraction must be in (0, 1)");
    if (clip_norm <= 0) throw TrainError("TrainConfig: clip_norm must be > 0");
  }
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double dev_precision = 0.0;
  double dev_recall = 0.0;
  double dev_f1 = 0.0;
  double mean_confidence = 0.0;
};

inline std::string metrics_csv(const std::vector<EpochMetrics>& ms) {
  std::ostringstream os;
  os << "epoch,train_loss,dev_loss,dev_p,dev_r,dev_f1,mean_conf\n";
  for (const auto& m : ms)
    os << m.epoch << "," << m.train_loss << "," << m.dev_loss << "," << m.dev_precision
       << "," << m.dev_recall << "," << m.dev_f1 << "," << m.mean_confidence << "\n";
  return os.str();
}

// Linear warmup to peak_lr over the first ceil(warmup_fraction * total) steps,
// then linear decay to zero at total_steps.
inline double lr_at(long step, long total_steps, double peak_lr, double warmup_fraction) {
  if (total_steps <= 0) throw TrainError("lr_at: total_steps must be > 0");
  if (step < 0 || step > total_steps) throw TrainError("lr_at: step out of range");
  const long warm = static_cast<long>(std::ceil(warmup_fraction * total_steps));
  if (step <= warm) return peak_lr * static_cast<double>(step) / warm;
  return peak_lr * static_cast<double>(total_steps - step) / (total_steps - warm);
}

// Global L2-norm gradient clipping over all parameters; returns the applied
// scale (1.0 when no clipping happened).
template <class S>
double clip_gradients(const std::vector<std::pair<std::string, TensorPtrT<S>>>& params,
                      double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : params) {
    p->ensure_grad();
    for (S gv : p->grad) sq += static_cast<double>(gv) * gv;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return 1.0;
  const double scale = max_norm / norm;
  for (const auto& [name, p] : params)
    for (S& gv : p->grad) gv = static_cast<S>(gv * scale);
  return scale;
}

// AdamW: Adam with bias correction followed by decoupled weight decay.
template <class S>
class AdamW {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit AdamW(const std::vector<std::pair<std::string, TensorPtrT<S>>>& params) {
    for (const auto& [name, p] : params) {
      m_.emplace_back(p->data.size(), 0.0);
      v_.emplace_back(p->data.size(), 0.0);
    }
  }

  void step(const std::vector<std::pair<std::string, TensorPtrT<S>>>& params, double lr,
            double weight_decay) {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, t_);
    const double bc2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = params[k].second;
      p->ensure_grad();
      for (std::size_t i = 0; i < p->data.size(); ++i) {
        const double grad = static_cast<double>(p->grad[i]);
        if (!std::isfinite(grad))
          throw TrainError("non-finite gradient in parameter '" + params[k].first + "'");
        m_[k][i] = kBeta1 * m_[k][i] + (1.0 - kBeta1) * grad;
        v_[k][i] = kBeta2 * v_[k][i] + (1.0 - kBeta2) * grad * grad;
        const double m_hat = m_[k][i] / bc1;
        const double v_hat = v_[k][i] / bc2;
        double theta = static_cast<double>(p->data[i]);
        theta -= lr * m_hat / (std::sqrt(v_hat) + kEps);
        theta -= lr * weight_decay * theta;
        p->data[i] = static_cast<S>(theta);
      }
    }
  }

  long steps_taken() const { return t_; }

 private:
  long t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

inline TargetMatrix build_targets(const Sentence& s, int c, const TrainConfig& cfg) {
  switch (cfg.target_mode) {
    case TargetMode::kHard:
      return hard_targets(s.entities, s.length(), c);
    case TargetMode::kBoundarySmooth:
      return smooth_targets(s.entities, s.length(), c, cfg.epsilon, cfg.smooth_size,
                            cfg.ring_share);
    case TargetMode::kLabelSmooth:
      return label_smooth_targets(s.entities, s.length(), c, cfg.alpha);
  }
  throw TrainError("unknown target mode");
}

struct TrainResult {
  Checkpoint final_checkpoint;
  Checkpoint best_checkpoint;  // best dev F1; equals final when no dev split
  double best_dev_f1 = -1.0;
  int best_epoch = -1;
  std::vector<EpochMetrics> metrics;
};

namespace detail {

// Mean eval-mode loss per sentence, with targets built per the config.
inline double corpus_loss(Model& model, const std::vector<Sentence>& corpus,
                          const Vocab& vocab, const TrainConfig& cfg, bool lowercase) {
  if (corpus.empty()) return 0.0;
  Rng rng(0);  // eval mode draws nothing
  double total = 0.0;
  for (const auto& s : corpus) {
    Graph g;
    auto targets = build_targets(s, model.cfg.type_count, cfg);
    auto loss = model.sentence_loss(g, vocab.encode(s, lowercase), targets, false, rng);
    total += static_cast<double>(loss->data[0]);
  }
  return total / static_cast<double>(corpus.size());
}

}  // namespace detail

// The optimization loop: per epoch, seeded shuffle, batches, targets per the
// configured mode, forward, backward, clip, AdamW step, scheduler advance.
// Dev loss uses the same target mode as training.
inline TrainResult train(const std::vector<Sentence>& train_set,
                         const std::vector<Sentence>& dev_set, const Vocab& vocab,
                         const ModelConfig& model_cfg, const TrainConfig& cfg,
                         DecodeMode decode_mode = DecodeMode::kFlat, bool lowercase = false,
                         std::ostream* log = nullptr) {
  cfg.validate();
  if (train_set.empty()) throw TrainError("train: empty training split");

  Rng rng(cfg.seed);
  Model model(model_cfg);
  model.init(rng);
  auto params = model.named_params();
  AdamW<float> opt(params);

  const long batches_per_epoch =
      (static_cast<long>(train_set.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = std::max<long>(1, cfg.epochs * batches_per_epoch);

  // Pre-encode token ids; entity geometry is untouched by encoding.
  std::vector<std::vector<int>> encoded;
  encoded.reserve(train_set.size());
  for (const auto& s : train_set) encoded.push_back(vocab.encode(s, lowercase));

  TrainResult result;
  long step = 0;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    // Length bucketing within the shuffled epoch: stable sort keeps the
    // shuffle's order among equal lengths.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return train_set[a].length() < train_set[b].length();
    });

    double epoch_loss = 0.0;
    long seen = 0;
    for (long b = 0; b < batches_per_epoch; ++b) {
      const std::size_t lo = static_cast<std::size_t>(b) * cfg.batch_size;
      const std::size_t hi = std::min(lo + cfg.batch_size, order.size());
      Graph g;
      TensorPtr batch_loss;
      for (std::size_t k = lo; k < hi; ++k) {
        const auto& s = train_set[order[k]];
        auto targets = build_targets(s, model_cfg.type_count, cfg);
        auto loss = model.sentence_loss(g, encoded[order[k]], targets, true, rng);
        batch_loss = batch_loss ? add(g, batch_loss, loss) : loss;
      }
      const auto n_in_batch = static_cast<float>(hi - lo);
      batch_loss = scale(g, batch_loss, 1.0f / n_in_batch);
      const double loss_val = batch_loss->data[0];
      if (!std::isfinite(loss_val))
        throw TrainError("divergence: non-finite loss at epoch " + std::to_string(epoch) +
                         " step " + std::to_string(step));
      epoch_loss += loss_val * n_in_batch;
      seen += static_cast<long>(hi - lo);

      for (auto& [name, p] : params) p->zero_grad();
      g.backward(batch_loss);
      clip_gradients(params, cfg.clip_norm);
      ++step;
      opt.step(params, lr_at(step, total_steps, cfg.lr, cfg.warmup_fraction),
               cfg.weight_decay);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = epoch_loss / seen;
    if (!dev_set.empty()) {
      m.dev_loss = detail::corpus_loss(model, dev_set, vocab, cfg, lowercase);
      Rng eval_rng(0);
      std::vector<std::vector<Span>> preds, golds;
      double conf_sum = 0.0;
      long conf_n = 0;
      for (const auto& s : dev_set) {
        auto probs = model.predict_probs(vocab.encode(s, lowercase), eval_rng);
        auto ents = decode(probs, decode_mode);
        std::vector<Span> spans;
        for (const auto& e : ents) {
          spans.push_back(e.span);
          conf_sum += e.confidence;
          ++conf_n;
        }
        preds.push_back(std::move(spans));
        golds.push_back(s.entities);
      }
      auto report = evaluate(preds, golds);
      m.dev_precision = report.precision;
      m.dev_recall = report.recall;
      m.dev_f1 = report.f1;
      m.mean_confidence = conf_n ? conf_sum / conf_n : 0.0;
      if (m.dev_f1 > result.best_dev_f1) {
        result.best_dev_f1 = m.dev_f1;
        result.best_epoch = epoch;
        result.best_checkpoint = checkpoint_from_model(model, vocab);
      }
    }
    result.metrics.push_back(m);
    if (log)
      *log << "epoch " << epoch << " train_loss " << m.train_loss << " dev_loss "
           << m.dev_loss << " dev_f1 " << m.dev_f1 << "\n";
  }

  result.final_checkpoint = checkpoint_from_model(model, vocab);
  if (result.best_epoch < 0) result.best_checkpoint = result.final_checkpoint;
  return result;
}

}  // namespace bsner
