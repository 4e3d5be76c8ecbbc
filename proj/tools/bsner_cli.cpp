// Command-line surface for the boundary-smoothing NER toolkit.
//
// Exit codes: 0 ok, 2 usage/config error, 3 training divergence, 4 checkpoint
// shape mismatch, 5 empty input.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "bsner/calibration.hpp"
#include "bsner/checkpoint.hpp"
#include "bsner/corpus.hpp"
#include "bsner/decode.hpp"
#include "bsner/landscape.hpp"
#include "bsner/model.hpp"
#include "bsner/synthetic.hpp"
#include "bsner/targets.hpp"
#include "bsner/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitShapeMismatch = 4;
constexpr int kExitEmptyInput = 5;

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read '" + path + "'");
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + path + "'");
  os << content;
}

struct RunConfig {
  std::string train_path, dev_path, test_path;
  std::string format = "jsonl";  // jsonl | conll
  std::string decode_mode = "flat";
  std::string output_dir = "out";
  bool lowercase = false;
  int min_freq = 1;
  bsner::ModelConfig model;
  bsner::TrainConfig training;
};

bsner::TargetMode target_mode_from_string(const std::string& s) {
  if (s == "hard") return bsner::TargetMode::kHard;
  if (s == "boundary_smooth") return bsner::TargetMode::kBoundarySmooth;
  if (s == "label_smooth") return bsner::TargetMode::kLabelSmooth;
  throw std::runtime_error("unknown target_mode '" + s + "'");
}

std::string target_mode_to_string(bsner::TargetMode m) {
  switch (m) {
    case bsner::TargetMode::kHard: return "hard";
    case bsner::TargetMode::kBoundarySmooth: return "boundary_smooth";
    case bsner::TargetMode::kLabelSmooth: return "label_smooth";
  }
  return "hard";
}

RunConfig parse_run_config(const json& j) {
  RunConfig c;
  c.train_path = j.value("train_path", "");
  c.dev_path = j.value("dev_path", "");
  c.test_path = j.value("test_path", "");
  c.format = j.value("format", c.format);
  c.decode_mode = j.value("decode_mode", c.decode_mode);
  c.output_dir = j.value("output_dir", c.output_dir);
  c.lowercase = j.value("lowercase", c.lowercase);
  c.min_freq = j.value("min_freq", c.min_freq);
  c.training.seed = j.value("seed", c.training.seed);
  if (j.contains("model")) {
    const json& m = j["model"];
    c.model.embed_dim = m.value("embed_dim", c.model.embed_dim);
    c.model.lstm_hidden = m.value("lstm_hidden", c.model.lstm_hidden);
    c.model.lstm_dropout = m.value("lstm_dropout", c.model.lstm_dropout);
    c.model.affine_hidden = m.value("affine_hidden", c.model.affine_hidden);
    c.model.affine_dropout = m.value("affine_dropout", c.model.affine_dropout);
    c.model.width_embed_dim = m.value("width_embed_dim", c.model.width_embed_dim);
    c.model.max_width = m.value("max_width", c.model.max_width);
  }
  if (j.contains("training")) {
    const json& t = j["training"];
    c.training.epochs = t.value("epochs", c.training.epochs);
    c.training.batch_size = t.value("batch_size", c.training.batch_size);
    c.training.lr = t.value("lr", c.training.lr);
    c.training.weight_decay = t.value("weight_decay", c.training.weight_decay);
    c.training.warmup_fraction = t.value("warmup_fraction", c.training.warmup_fraction);
    c.training.clip_norm = t.value("clip_norm", c.training.clip_norm);
    c.training.target_mode =
        target_mode_from_string(t.value("target_mode", std::string("hard")));
    c.training.epsilon = t.value("epsilon", c.training.epsilon);
    c.training.smooth_size = t.value("smooth_size", c.training.smooth_size);
    c.training.alpha = t.value("alpha", c.training.alpha);
    c.training.ring_share = t.value("ring_share", std::string("valid")) == "nominal"
                                ? bsner::RingShare::kNominal
                                : bsner::RingShare::kValidMembers;
  }
  return c;
}

json run_config_to_json(const RunConfig& c) {
  json j;
  j["train_path"] = c.train_path;
  j["dev_path"] = c.dev_path;
  j["test_path"] = c.test_path;
  j["format"] = c.format;
  j["decode_mode"] = c.decode_mode;
  j["output_dir"] = c.output_dir;
  j["lowercase"] = c.lowercase;
  j["min_freq"] = c.min_freq;
  j["seed"] = c.training.seed;
  j["model"] = bsner::model_config_to_json(c.model);
  j["training"] = {{"epochs", c.training.epochs},
                   {"batch_size", c.training.batch_size},
                   {"lr", c.training.lr},
                   {"weight_decay", c.training.weight_decay},
                   {"warmup_fraction", c.training.warmup_fraction},
                   {"clip_norm", c.training.clip_norm},
                   {"target_mode", target_mode_to_string(c.training.target_mode)},
                   {"epsilon", c.training.epsilon},
                   {"smooth_size", c.training.smooth_size},
                   {"alpha", c.training.alpha},
                   {"ring_share", c.training.ring_share == bsner::RingShare::kNominal
                                      ? "nominal"
                                      : "valid"}};
  return j;
}

std::vector<bsner::Sentence> parse_corpus(const std::string& path, const std::string& format,
                                          bsner::Vocab* types) {
  const std::string text = read_file(path);
  if (format == "conll") return bsner::parse_conll(text, types);
  if (format == "jsonl") return bsner::parse_jsonl(text, types);
  throw std::runtime_error("unknown corpus format '" + format + "'");
}

int cmd_train(const std::string& config_path) {
  RunConfig cfg;
  try {
    cfg = parse_run_config(json::parse(read_file(config_path)));
    if (cfg.train_path.empty() || !fs::exists(cfg.train_path))
      throw std::runtime_error("train_path missing or does not exist");
    if (!cfg.dev_path.empty() && !fs::exists(cfg.dev_path))
      throw std::runtime_error("dev_path does not exist");
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    bsner::Vocab types;
    auto train_set = parse_corpus(cfg.train_path, cfg.format, &types);
    std::vector<bsner::Sentence> dev_set;
    if (!cfg.dev_path.empty()) dev_set = parse_corpus(cfg.dev_path, cfg.format, &types);
    auto vocab = bsner::build_vocab(train_set, cfg.min_freq, cfg.lowercase, &types);
    cfg.model.vocab_size = vocab.token_count();
    cfg.model.type_count = vocab.type_count();

    fs::create_directories(cfg.output_dir);
    write_file((fs::path(cfg.output_dir) / "config.json").string(),
               run_config_to_json(cfg).dump(2) + "\n");

    auto result =
        bsner::train(train_set, dev_set, vocab, cfg.model, cfg.training,
                     bsner::decode_mode_from_string(cfg.decode_mode), cfg.lowercase,
                     &std::cout);
    bsner::save_checkpoint(result.final_checkpoint,
                           (fs::path(cfg.output_dir) / "final.ckpt").string());
    bsner::save_checkpoint(result.best_checkpoint,
                           (fs::path(cfg.output_dir) / "best.ckpt").string());
    write_file((fs::path(cfg.output_dir) / "metrics.csv").string(),
               bsner::metrics_csv(result.metrics));
    if (result.best_epoch >= 0)
      std::cout << "best dev F1 " << result.best_dev_f1 << " at epoch " << result.best_epoch
                << "\n";
    return kExitOk;
  } catch (const bsner::TrainError& e) {
    std::cerr << "training error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

std::vector<std::vector<bsner::Span>> align_gold(const std::vector<bsner::Sentence>& corpus) {
  std::vector<std::vector<bsner::Span>> gold;
  gold.reserve(corpus.size());
  for (const auto& s : corpus) gold.push_back(s.entities);
  return gold;
}

// Re-encodes a parsed corpus's entity types against the checkpoint's type
// vocabulary (parsers assign ids by first appearance).
std::vector<bsner::Sentence> remap_types(std::vector<bsner::Sentence> corpus,
                                         const bsner::Vocab& parse_types,
                                         const bsner::Vocab& ck_vocab) {
  for (auto& s : corpus)
    for (auto& sp : s.entities) {
      const std::string& name = parse_types.id_to_type.at(sp.type_id);
      auto it = ck_vocab.type_to_id.find(name);
      if (it == ck_vocab.type_to_id.end())
        throw std::runtime_error("entity type '" + name + "' not in checkpoint");
      sp.type_id = it->second;
    }
  return corpus;
}

int cmd_eval(const std::string& ckpt_path, const std::string& corpus_path,
             const std::string& format, const std::string& mode_str,
             const std::string& dump_path, double min_confidence, bool lowercase) {
  try {
    auto ck = bsner::load_checkpoint(ckpt_path);
    bsner::Model model = [&] {
      try {
        return bsner::model_from_checkpoint(ck);
      } catch (const bsner::CheckpointError&) {
        throw;  // handled below as shape mismatch
      }
    }();
    bsner::Vocab parse_types;
    auto corpus = remap_types(parse_corpus(corpus_path, format, &parse_types), parse_types,
                              ck.vocab);
    auto mode = bsner::decode_mode_from_string(mode_str);
    bsner::Rng rng(0);
    std::vector<std::vector<bsner::Span>> preds;
    std::ostringstream dump;
    for (std::size_t sid = 0; sid < corpus.size(); ++sid) {
      auto probs = model.predict_probs(ck.vocab.encode(corpus[sid], lowercase), rng);
      auto ents = bsner::decode(probs, mode, static_cast<int>(sid), min_confidence);
      std::vector<bsner::Span> spans;
      for (const auto& e : ents) {
        spans.push_back(e.span);
        json j = {{"sentence_id", e.sentence_id},
                  {"start", e.span.start},
                  {"end", e.span.end + 1},
                  {"type", ck.vocab.id_to_type.at(e.span.type_id)},
                  {"confidence", e.confidence}};
        dump << j.dump() << "\n";
      }
      preds.push_back(std::move(spans));
    }
    auto report = bsner::evaluate(preds, align_gold(corpus));
    std::cout << "precision " << report.precision << "\nrecall " << report.recall << "\nf1 "
              << report.f1 << "\n";
    if (!dump_path.empty()) write_file(dump_path, dump.str());
    return kExitOk;
  } catch (const bsner::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitShapeMismatch;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

int cmd_calibrate(const std::string& pred_path, const std::string& gold_path,
                  const std::string& format, int bins, const std::string& out_csv) {
  try {
    bsner::Vocab types;
    auto corpus = parse_corpus(gold_path, format, &types);
    std::vector<bsner::PredictedEntity> preds;
    std::istringstream is(read_file(pred_path));
    std::string line;
    while (std::getline(is, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      json j = json::parse(line);
      bsner::PredictedEntity p;
      p.sentence_id = j.at("sentence_id").get<int>();
      p.span.start = j.at("start").get<int>();
      p.span.end = j.at("end").get<int>() - 1;  // file is end-exclusive
      const std::string ty = j.at("type").get<std::string>();
      auto it = types.type_to_id.find(ty);
      p.span.type_id = it == types.type_to_id.end() ? types.add_type(ty) : it->second;
      p.confidence = j.at("confidence").get<double>();
      preds.push_back(p);
    }
    if (preds.empty()) {
      std::cerr << "no predictions in '" << pred_path << "'\n";
      return kExitEmptyInput;
    }
    auto binned = bsner::bin_entities(preds, align_gold(corpus), bins);
    std::cout << "ece " << bsner::ece(binned) << "\n";
    if (!out_csv.empty()) write_file(out_csv, bsner::reliability_csv(binned));
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

int cmd_landscape(const std::string& ckpt_path, const std::string& train_path,
                  const std::string& dev_path, const std::string& test_path,
                  const std::string& format, std::uint64_t seed, int points,
                  const std::string& mode_str, const std::string& loss_str, double epsilon,
                  int smooth_size, int max_sentences, const std::string& out_csv,
                  bool lowercase) {
  try {
    if (points % 2 == 0 || points < 3) {
      std::cerr << "--points must be odd and >= 3 so alpha = 0 is sampled\n";
      return kExitUsage;
    }
    auto ck = bsner::load_checkpoint(ckpt_path);
    auto dir = bsner::sample_direction(ck, seed, bsner::direction_mode_from_string(mode_str));
    bsner::TrainConfig loss_cfg;
    if (loss_str == "bs") {
      loss_cfg.target_mode = bsner::TargetMode::kBoundarySmooth;
      loss_cfg.epsilon = epsilon;
      loss_cfg.smooth_size = smooth_size;
    } else if (loss_str == "ce") {
      loss_cfg.target_mode = bsner::TargetMode::kHard;
    } else {
      throw std::runtime_error("unknown loss mode '" + loss_str + "'");
    }
    std::vector<std::pair<std::string, std::vector<bsner::LandscapePoint>>> curves;
    auto add_split = [&](const std::string& name, const std::string& path) {
      if (path.empty()) return;
      bsner::Vocab parse_types;
      auto corpus = remap_types(parse_corpus(path, format, &parse_types), parse_types,
                                ck.vocab);
      if (max_sentences > 0 && static_cast<int>(corpus.size()) > max_sentences)
        corpus.resize(max_sentences);
      curves.emplace_back(name,
                          bsner::landscape_1d(ck, dir, corpus, loss_cfg, points, lowercase));
    };
    add_split("train", train_path);
    add_split("dev", dev_path);
    add_split("test", test_path);
    if (curves.empty()) {
      std::cerr << "no corpus splits given\n";
      return kExitEmptyInput;
    }
    write_file(out_csv, bsner::landscape_csv(curves));
    return kExitOk;
  } catch (const bsner::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitShapeMismatch;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

int cmd_dump_targets(const std::string& corpus_path, const std::string& format,
                     double epsilon, int smooth_size, const std::string& ring_share,
                     const std::string& out_csv) {
  try {
    bsner::Vocab types;
    auto corpus = parse_corpus(corpus_path, format, &types);
    const auto share = ring_share == "nominal" ? bsner::RingShare::kNominal
                                               : bsner::RingShare::kValidMembers;
    std::ostringstream os;
    os << "sentence_id,i,j,type,prob\n";
    for (std::size_t sid = 0; sid < corpus.size(); ++sid) {
      const auto& s = corpus[sid];
      auto m = bsner::smooth_targets(s.entities, s.length(), types.type_count(), epsilon,
                                     smooth_size, share);
      for (int i = 0; i < m.T; ++i)
        for (int j = i; j < m.T; ++j)
          for (int t = 0; t < m.c; ++t)
            os << sid << "," << i << "," << j << "," << types.id_to_type.at(t) << ","
               << m.cell(i, j)[t] << "\n";
    }
    write_file(out_csv, os.str());
    return kExitOk;
  } catch (const bsner::TargetError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

int cmd_gen_synthetic(const std::string& kind, const std::string& out_dir,
                      std::uint64_t seed, int train_n, int dev_n, int test_n) {
  try {
    bsner::SyntheticConfig cfg;
    if (kind == "noisy")
      cfg.noise_p = 0.15;
    else if (kind != "separable")
      throw std::runtime_error("kind must be 'separable' or 'noisy'");
    bsner::Rng rng(seed);
    bsner::Vocab types;
    fs::create_directories(out_dir);
    auto emit = [&](const std::string& name, int n) {
      cfg.sentences = n;
      auto sents = bsner::generate_synthetic(cfg, rng, &types);
      write_file((fs::path(out_dir) / (name + ".jsonl")).string(),
                 bsner::emit_jsonl(sents, types));
    };
    emit("train", train_n);
    emit("dev", dev_n);
    emit("test", test_n);
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Span-based NER toolkit with boundary smoothing"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train = app.add_subcommand("train", "train a model from a JSON config");
  train->add_option("--config", config_path, "JSON run config")->required();

  std::string ckpt, corpus, format = "jsonl", mode = "flat", dump_path;
  double min_conf = 0.0;
  bool lowercase = false;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
  eval->add_option("--checkpoint", ckpt)->required();
  eval->add_option("--corpus", corpus)->required();
  eval->add_option("--format", format, "jsonl|conll");
  eval->add_option("--decode-mode", mode, "flat|nested");
  eval->add_option("--dump-predictions", dump_path, "write prediction JSONL");
  eval->add_option("--min-confidence", min_conf, "minimum-confidence filter");
  eval->add_flag("--lowercase", lowercase);

  std::string preds_path, gold_path, cal_format = "jsonl", rel_csv;
  int bins = 10;
  auto* cal = app.add_subcommand("calibrate", "ECE and reliability diagram data");
  cal->add_option("--predictions", preds_path)->required();
  cal->add_option("--gold", gold_path)->required();
  cal->add_option("--format", cal_format, "jsonl|conll");
  cal->add_option("--bins", bins, "number of confidence bins");
  cal->add_option("--out", rel_csv, "reliability CSV path");

  std::string l_ckpt, l_train, l_dev, l_test, l_format = "jsonl", l_mode = "per_weight";
  std::string l_loss = "ce", l_out = "landscape.csv";
  std::uint64_t l_seed = 0;
  int l_points = 51, l_max_sentences = 0, l_smooth = 1;
  double l_eps = 0.1;
  bool l_lower = false;
  auto* land = app.add_subcommand("landscape", "1-D loss landscape slices");
  land->add_option("--checkpoint", l_ckpt)->required();
  land->add_option("--train", l_train);
  land->add_option("--dev", l_dev);
  land->add_option("--test", l_test);
  land->add_option("--format", l_format, "jsonl|conll");
  land->add_option("--seed", l_seed, "direction seed");
  land->add_option("--points", l_points, "odd number of alpha samples");
  land->add_option("--mode", l_mode, "per_weight|per_tensor");
  land->add_option("--loss", l_loss, "ce|bs");
  land->add_option("--epsilon", l_eps, "bs loss epsilon");
  land->add_option("--smooth-size", l_smooth, "bs loss D");
  land->add_option("--max-sentences", l_max_sentences, "cap per split (0 = all)");
  land->add_option("--out", l_out, "output CSV");
  land->add_flag("--lowercase", l_lower);

  std::string d_corpus, d_format = "jsonl", d_out = "targets.csv", d_share = "valid";
  double d_eps = 0.1;
  int d_smooth = 1;
  auto* dump = app.add_subcommand("dump-targets", "smoothing debug CSV");
  dump->add_option("--corpus", d_corpus)->required();
  dump->add_option("--format", d_format, "jsonl|conll");
  dump->add_option("--epsilon", d_eps);
  dump->add_option("--smooth-size", d_smooth);
  dump->add_option("--ring-share", d_share, "valid|nominal");
  dump->add_option("--out", d_out);

  std::string g_kind = "separable", g_out = "data";
  std::uint64_t g_seed = 7;
  int g_train = 500, g_dev = 100, g_test = 100;
  auto* gen = app.add_subcommand("gen-synthetic", "regenerate the bundled synthetic corpora");
  gen->add_option("--kind", g_kind, "separable|noisy");
  gen->add_option("--out-dir", g_out)->required();
  gen->add_option("--seed", g_seed);
  gen->add_option("--train-n", g_train);
  gen->add_option("--dev-n", g_dev);
  gen->add_option("--test-n", g_test);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  if (train->parsed()) return cmd_train(config_path);
  if (eval->parsed())
    return cmd_eval(ckpt, corpus, format, mode, dump_path, min_conf, lowercase);
  if (cal->parsed()) return cmd_calibrate(preds_path, gold_path, cal_format, bins, rel_csv);
  if (land->parsed())
    return cmd_landscape(l_ckpt, l_train, l_dev, l_test, l_format, l_seed, l_points, l_mode,
                         l_loss, l_eps, l_smooth, l_max_sentences, l_out, l_lower);
  if (dump->parsed())
    return cmd_dump_targets(d_corpus, d_format, d_eps, d_smooth, d_share, d_out);
  if (gen->parsed()) return cmd_gen_synthetic(g_kind, g_out, g_seed, g_train, g_dev, g_test);
  return kExitUsage;
}
