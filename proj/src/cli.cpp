#include "sumforge/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "sumforge/checkpoint.hpp"
#include "sumforge/error.hpp"
#include "sumforge/infer.hpp"
#include "sumforge/ingest.hpp"
#include "sumforge/rouge.hpp"
#include "sumforge/tokenize.hpp"
#include "sumforge/train.hpp"
#include "sumforge/unicode.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sumforge::cli {

// ---------------------------------------------------------------------------
// Settings

Settings parse_settings(std::string_view text, const std::string& origin) {
  Settings out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string line(unicode::trim(text.substr(pos, end - pos)));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(Errc::ConfigError, origin + ":" + std::to_string(line_no) + ": expected key=value");
    const std::string key(unicode::trim(std::string_view(line).substr(0, eq)));
    if (key.empty()) throw Error(Errc::ConfigError, origin + ":" + std::to_string(line_no) + ": empty key");
    out[key] = std::string(unicode::trim(std::string_view(line).substr(eq + 1)));
  }
  return out;
}

Settings read_settings(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw Error(Errc::ConfigError, "config file not found: " + path.string());
  return parse_settings(ingest::read_file(path), path.string());
}

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last || value.empty())
    throw Error(Errc::ConfigError, "invalid value for " + key + ": '" + value + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  return parse_number<std::uint64_t>(key, value);
}

double parse_double(const std::string& key, const std::string& value) { return parse_number<double>(key, value); }

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "vocab_size",     "d_model",        "n_heads",        "d_ff",           "n_enc_layers",
      "n_dec_layers",   "max_positions",  "dropout",        "base_lr_encoder", "base_lr_decoder",
      "warmup_encoder", "warmup_decoder", "batch_size",     "max_steps",      "grad_clip_norm",
      "seed",           "eval_every",     "label_smoothing", "mask_prob"};
  return keys;
}

void check_keys(const Settings& s) {
  for (const auto& [k, v] : s)
    if (!known_keys().count(k)) throw Error(Errc::ConfigError, "unknown config key: " + k);
}

model::ModelConfig model_config_from(const Settings& s) {
  model::ModelConfig c;
  auto get = [&](const char* key, auto& field) {
    const auto it = s.find(key);
    if (it == s.end()) return;
    if constexpr (std::is_same_v<std::decay_t<decltype(field)>, double>)
      field = parse_double(key, it->second);
    else
      field = static_cast<std::decay_t<decltype(field)>>(parse_u64(key, it->second));
  };
  get("vocab_size", c.vocab_size);
  get("d_model", c.d_model);
  get("n_heads", c.n_heads);
  get("d_ff", c.d_ff);
  get("n_enc_layers", c.n_enc_layers);
  get("n_dec_layers", c.n_dec_layers);
  get("max_positions", c.max_positions);
  get("dropout", c.dropout);
  return c;
}

train::TrainConfig train_config_from(const Settings& s, std::uint64_t seed) {
  const std::uint64_t steps = s.count("max_steps") ? parse_u64("max_steps", s.at("max_steps")) : 0;
  train::TrainConfig c = train::default_train_config(steps);
  c.seed = seed;
  auto get_d = [&](const char* key, double& field) {
    if (s.count(key)) field = parse_double(key, s.at(key));
  };
  auto get_u = [&](const char* key, auto& field) {
    if (s.count(key)) field = static_cast<std::decay_t<decltype(field)>>(parse_u64(key, s.at(key)));
  };
  get_d("base_lr_encoder", c.base_lr_encoder);
  get_d("base_lr_decoder", c.base_lr_decoder);
  get_u("warmup_encoder", c.warmup_encoder);
  get_u("warmup_decoder", c.warmup_decoder);
  get_u("batch_size", c.batch_size);
  get_d("grad_clip_norm", c.grad_clip_norm);
  get_u("eval_every", c.eval_every);
  get_d("label_smoothing", c.label_smoothing);
  c.validate();
  return c;
}

/// Exit status for a library error: bad inputs are usage errors, broken
/// graph invariants are internal.
int exit_code_for(Errc code) {
  switch (code) {
    case Errc::GraphCycle:
    case Errc::NotScalar:
    case Errc::InvalidAxis:
      return kExitInternal;
    default:
      return kExitUsage;
  }
}

/// Settings from --config, then --set overrides, --seed and --max-steps.
struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string seed;
  std::string max_steps;

  void add_to(CLI::App& cmd) {
    cmd.add_option("--config", config_path, "key=value config file");
    cmd.add_option("--set", overrides, "override a config key (KEY=VALUE)");
    cmd.add_option("--seed", seed, "random seed");
    cmd.add_option("--max-steps", max_steps, "training steps");
  }

  Settings resolve() const {
    Settings s = config_path.empty() ? Settings{} : read_settings(config_path);
    for (const std::string& kv : overrides) {
      const Settings one = parse_settings(kv, "--set");
      if (one.empty()) throw Error(Errc::ConfigError, "empty --set value");
      for (const auto& [k, v] : one) s[k] = v;
    }
    if (!max_steps.empty()) s["max_steps"] = max_steps;
    check_keys(s);
    const std::uint64_t resolved = resolve_seed(seed, s);
    s["seed"] = std::to_string(resolved);
    return s;
  }
};

void write_manifest(RunManifest& manifest, const fs::path& path) {
  manifest.finished = utc_now();
  manifest.outputs.push_back(path.string());
  ingest::write_file(path, manifest.to_json());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

std::vector<fs::path> story_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(Errc::IoError, "not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".story") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  return files;
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out += '\n';
    out += lines[i];
  }
  return out;
}

void copy_vocab(const fs::path& from, const fs::path& to_dir, RunManifest& manifest) {
  const fs::path dest = to_dir / "vocab.txt";
  if (fs::exists(dest) && fs::equivalent(from, dest)) return;
  ingest::write_file(dest, ingest::read_file(from));
  manifest.outputs.push_back(dest.string());
}

// ---------------------------------------------------------------------------
// Subcommands

struct ConvertArgs {
  std::string input;
  std::string encoding = "windows-1256";
  std::string out;
};

int cmd_convert(const ConvertArgs& a, std::ostream& out) {
  RunManifest manifest{"convert", {{"input", a.input}, {"encoding", a.encoding}, {"out", a.out}}, 0, utc_now(), {}, {}};
  if (!fs::is_directory(a.input)) throw Error(Errc::IoError, "input directory not found: " + a.input);
  const std::size_t count = ingest::ingest_corpus(a.input, a.encoding, a.out);
  manifest.outputs.push_back((fs::path(a.out) / "manifest.csv").string());
  write_manifest(manifest, fs::path(a.out) / "run_manifest.json");
  out << count << " documents\n";
  return kExitOk;
}

struct PreprocessArgs {
  std::string stories;
  std::string vocab;
  std::string out;
  std::size_t max_positions = 512;
  std::size_t shard_size = tokenize::kDefaultShardSize;
  std::size_t max_tgt_len = 128;
};

int cmd_preprocess(const PreprocessArgs& a, std::ostream& out) {
  RunManifest manifest{"preprocess",
                       {{"stories", a.stories},
                        {"vocab", a.vocab},
                        {"out", a.out},
                        {"max_positions", std::to_string(a.max_positions)},
                        {"shard_size", std::to_string(a.shard_size)},
                        {"max_tgt_len", std::to_string(a.max_tgt_len)}},
                       0,
                       utc_now(),
                       {},
                       {}};
  if (a.shard_size < 1) throw Error(Errc::ConfigError, "shard size must be >= 1");
  const tokenize::Vocab vocab = tokenize::load_vocab(a.vocab);
  std::vector<tokenize::TokenizedExample> examples;
  for (const fs::path& file : story_files(a.stories)) {
    const ingest::StoryDoc doc = ingest::parse_story(ingest::read_file(file), file.stem().string());
    examples.push_back(tokenize::encode_example(doc, vocab, a.max_positions, a.max_tgt_len));
  }
  if (examples.empty()) throw Error(Errc::EmptyCorpus, "no .story files in " + a.stories);
  ensure_dir(a.out);
  const std::size_t shards = tokenize::write_shards(examples, a.out, a.shard_size);
  for (std::size_t k = 0; k < shards; ++k)
    manifest.outputs.push_back((fs::path(a.out) / ("shard_" + std::to_string(k) + ".jsonl")).string());
  copy_vocab(a.vocab, a.out, manifest);
  write_manifest(manifest, fs::path(a.out) / "run_manifest.json");
  out << shards << (shards == 1 ? " shard\n" : " shards\n");
  return kExitOk;
}

struct TrainArgs {
  std::string task;
  std::string shards;
  std::string out;
  std::string init_encoder;
  ConfigFlags config;
};

/// vocab_size from the config, else from the vocab beside the shards.
void fill_vocab_size(Settings& s, const fs::path& shards_dir) {
  if (s.count("vocab_size")) return;
  const fs::path vocab_path = shards_dir / "vocab.txt";
  if (!fs::is_regular_file(vocab_path))
    throw Error(Errc::ConfigError, "vocab_size not configured and no vocab.txt in " + shards_dir.string());
  s["vocab_size"] = std::to_string(tokenize::load_vocab(vocab_path).size());
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const model::TaskKind task = model::parse_task(a.task);
  Settings settings = a.config.resolve();
  fill_vocab_size(settings, a.shards);
  const std::uint64_t seed = parse_u64("seed", settings.at("seed"));
  RunManifest manifest{"train", settings, seed, utc_now(), {}, {}};
  manifest.config["task"] = a.task;
  manifest.config["shards"] = a.shards;
  if (!a.init_encoder.empty()) manifest.config["init_encoder"] = a.init_encoder;

  model::ModelConfig mc = model_config_from(settings);
  train::TrainConfig tc = train_config_from(settings, seed);
  tc.checkpoint_dir = a.out;
  std::optional<checkpoint::Checkpoint> init;
  if (!a.init_encoder.empty()) {
    init = checkpoint::read_checkpoint(a.init_encoder);
    if (init->kind != checkpoint::Kind::Encoder && checkpoint::task_of(init->kind) != task)
      throw Error(Errc::ModelKindMismatch, std::string("--init-encoder holds a ") + checkpoint::kind_name(init->kind) +
                                               " model, expected an encoder or " + model::task_name(task) + " checkpoint");
  }
  const std::vector<tokenize::TokenizedExample> examples = tokenize::read_shards(a.shards);
  if (examples.empty()) throw Error(Errc::EmptyCorpus, "no examples in " + a.shards);
  mc.pretrained_encoder = init.has_value();
  auto m = model::SummarizationModel<float>::build(task, mc, seed);
  if (init) checkpoint::load_encoder(m, *init);

  ensure_dir(a.out);
  const train::TrainResult result =
      task == model::TaskKind::Extractive ? train::train_ext<float>(examples, m, tc) : train::train_abs<float>(examples, m, tc);
  for (const fs::path& p : result.written) manifest.outputs.push_back(p.string());
  manifest.outputs.push_back((fs::path(a.out) / "loss.csv").string());
  if (fs::is_regular_file(fs::path(a.shards) / "vocab.txt")) copy_vocab(fs::path(a.shards) / "vocab.txt", a.out, manifest);
  write_manifest(manifest, fs::path(a.out) / "run_manifest.json");
  out << m.variant() << ": " << result.trace.size() << " steps";
  if (!result.trace.empty()) out << ", final loss " << result.trace.back().loss;
  out << "\n";
  return kExitOk;
}

struct PrefitArgs {
  std::string shards;
  std::string out;
  ConfigFlags config;
};

int cmd_prefit(const PrefitArgs& a, std::ostream& out) {
  Settings settings = a.config.resolve();
  fill_vocab_size(settings, a.shards);
  const std::uint64_t seed = parse_u64("seed", settings.at("seed"));
  RunManifest manifest{"prefit", settings, seed, utc_now(), {}, {}};
  manifest.config["shards"] = a.shards;

  const fs::path vocab_path = fs::path(a.shards) / "vocab.txt";
  if (!fs::is_regular_file(vocab_path)) throw Error(Errc::ConfigError, "prefit needs vocab.txt in " + a.shards);
  const tokenize::Vocab vocab = tokenize::load_vocab(vocab_path);

  const model::ModelConfig mc = model_config_from(settings);
  train::PrefitConfig pc;
  pc.seed = seed;
  pc.specials = vocab.specials();
  auto get_d = [&](const char* key, double& field) {
    if (settings.count(key)) field = parse_double(key, settings.at(key));
  };
  if (settings.count("max_steps")) pc.steps = parse_u64("max_steps", settings.at("max_steps"));
  if (settings.count("batch_size")) pc.batch_size = parse_u64("batch_size", settings.at("batch_size"));
  if (settings.count("warmup_encoder")) pc.warmup = parse_u64("warmup_encoder", settings.at("warmup_encoder"));
  get_d("mask_prob", pc.mask_prob);
  get_d("base_lr_encoder", pc.base_lr);
  get_d("grad_clip_norm", pc.grad_clip_norm);

  const std::vector<tokenize::TokenizedExample> examples = tokenize::read_shards(a.shards);
  auto m = model::SummarizationModel<float>::build(model::TaskKind::Extractive, mc, seed);
  const train::PrefitResult result = train::prefit_encoder<float>(examples, m, pc);

  ensure_dir(a.out);
  const fs::path ckpt = fs::path(a.out) / "encoder.sumf";
  checkpoint::write_checkpoint(result.encoder, ckpt);
  const fs::path trace = fs::path(a.out) / "prefit_loss.csv";
  train::write_loss_trace(trace, result.trace);
  manifest.outputs = {ckpt.string(), trace.string()};
  write_manifest(manifest, fs::path(a.out) / "run_manifest.json");
  out << "encoder pre-fit: " << result.trace.size() << " steps";
  if (!result.trace.empty()) out << ", final loss " << result.trace.back().loss;
  out << "\n";
  return kExitOk;
}

struct SummarizeArgs {
  std::string task;
  std::string checkpoint;
  std::string input;
  std::string vocab;
  std::size_t k = 3;
  std::size_t beam = 5;
  std::size_t max_len = 60;
  std::size_t min_len = 1;
  double alpha = 0.6;
  bool no_block = false;
  std::string references_out;
  std::string manifest;
};

struct Summarizer {
  model::TaskKind task;
  model::SummarizationModel<float> model;
  tokenize::Vocab vocab;
  infer::ExtConfig ext;
  infer::BeamConfig beam;

  std::vector<std::string> summarize(const std::vector<std::string>& sentences) const {
    const auto example = infer::source_example(sentences, vocab, model.config().max_positions);
    if (task == model::TaskKind::Extractive) return infer::summarize_ext(model, example, ext, vocab.specials().pad);
    const std::string text = infer::summarize_abs(model, example, beam, vocab);
    std::vector<std::string> lines = ingest::split_sentences(text);
    if (lines.empty() && !text.empty()) lines.push_back(text);
    return lines;
  }
};

int cmd_summarize(const SummarizeArgs& a, std::ostream& out) {
  const model::TaskKind task = model::parse_task(a.task);
  RunManifest manifest{"summarize",
                       {{"task", a.task},
                        {"checkpoint", a.checkpoint},
                        {"input", a.input},
                        {"k", std::to_string(a.k)},
                        {"beam", std::to_string(a.beam)},
                        {"max_len", std::to_string(a.max_len)},
                        {"min_len", std::to_string(a.min_len)},
                        {"trigram_blocking", a.no_block ? "0" : "1"}},
                       0,
                       utc_now(),
                       {},
                       {}};
  const checkpoint::Checkpoint ckpt = checkpoint::read_checkpoint(a.checkpoint);
  const model::TaskKind ckpt_task = checkpoint::task_of(ckpt.kind);
  if (ckpt_task != task)
    throw Error(Errc::ModelKindMismatch, std::string("checkpoint holds a ") + checkpoint::kind_name(ckpt.kind) +
                                             " model, --task is " + model::task_name(task));
  manifest.seed = ckpt.seed;
  const fs::path vocab_path = a.vocab.empty() ? fs::path(a.checkpoint).parent_path() / "vocab.txt" : fs::path(a.vocab);
  Summarizer s{task, checkpoint::to_model<float>(ckpt), tokenize::load_vocab(vocab_path), {}, {}};
  s.ext.k = a.k;
  s.ext.use_trigram_blocking = !a.no_block;
  s.ext.validate();
  if (task == model::TaskKind::Abstractive) {
    s.beam = infer::BeamConfig::for_vocab(s.vocab);
    s.beam.beam_size = a.beam;
    s.beam.max_len = a.max_len;
    s.beam.min_len = a.min_len;
    s.beam.length_penalty_alpha = a.alpha;
    s.beam.block_repeat_trigrams = !a.no_block;
    s.beam.validate();
  }

  if (a.input != "-" && fs::is_directory(a.input)) {
    std::string references;
    for (const fs::path& file : story_files(a.input)) {
      const ingest::StoryParts parts = ingest::parse_story_parts(ingest::read_file(file), false);
      const std::string id = file.stem().string();
      json line{{"id", id}, {"text", join_lines(s.summarize(ingest::split_sentences(parts.body)))}};
      out << line.dump() << "\n";
      std::vector<std::string> highlights;
      for (const std::string& h : parts.highlights) {
        const auto sentences = ingest::split_sentences(h);
        highlights.insert(highlights.end(), sentences.begin(), sentences.end());
      }
      references += json{{"id", id}, {"text", join_lines(highlights)}}.dump() + "\n";
    }
    if (!a.references_out.empty()) {
      ingest::write_file(a.references_out, references);
      manifest.outputs.push_back(a.references_out);
    }
  } else {
    std::string text;
    if (a.input == "-") {
      std::ostringstream buf;
      buf << std::cin.rdbuf();
      text = buf.str();
    } else {
      if (!fs::is_regular_file(a.input)) throw Error(Errc::IoError, "input not found: " + a.input);
      text = ingest::read_file(a.input);
    }
    if (!unicode::is_valid_utf8(text)) throw Error(Errc::InvalidUtf8, "input is not UTF-8");
    const ingest::StoryParts parts = ingest::parse_story_parts(text, false);
    for (const std::string& line : s.summarize(ingest::split_sentences(parts.body))) out << line << "\n";
  }
  if (!a.manifest.empty()) write_manifest(manifest, a.manifest);
  return kExitOk;
}

struct EvaluateArgs {
  std::string predictions;
  std::string references;
  bool multi_ref = false;
  std::string manifest;
};

struct Record {
  std::string id;
  std::vector<std::string> texts;
};

std::vector<Record> read_records(const fs::path& path, bool allow_lists) {
  if (!fs::is_regular_file(path)) throw Error(Errc::IoError, "file not found: " + path.string());
  const std::string content = ingest::read_file(path);
  std::vector<Record> out;
  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (unicode::trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(Errc::InvalidArgument, where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("text")) throw Error(Errc::InvalidArgument, where + ": expected {\"id\", \"text\"}");
    Record r;
    if (j.contains("id")) r.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    const json& t = j["text"];
    if (t.is_string()) {
      r.texts.push_back(t.get<std::string>());
    } else if (allow_lists && t.is_array() && !t.empty() &&
               std::all_of(t.begin(), t.end(), [](const json& x) { return x.is_string(); })) {
      for (const json& x : t) r.texts.push_back(x.get<std::string>());
    } else {
      throw Error(Errc::InvalidArgument, where + ": text must be a string");
    }
    out.push_back(std::move(r));
  }
  return out;
}

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  RunManifest manifest{"evaluate",
                       {{"predictions", a.predictions}, {"references", a.references}, {"multi_ref", a.multi_ref ? "1" : "0"}},
                       0,
                       utc_now(),
                       {},
                       {}};
  const auto preds = read_records(a.predictions, false);
  const auto refs = read_records(a.references, a.multi_ref);
  if (preds.size() != refs.size())
    throw Error(Errc::LengthMismatch, std::to_string(preds.size()) + " predictions vs " + std::to_string(refs.size()) +
                                          " references");
  std::vector<std::string> p;
  std::vector<std::vector<std::string>> r;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!preds[i].id.empty() && !refs[i].id.empty() && preds[i].id != refs[i].id)
      throw Error(Errc::InvalidArgument, "id mismatch at record " + std::to_string(i + 1) + ": " + preds[i].id +
                                             " vs " + refs[i].id);
    p.push_back(preds[i].texts.front());
    r.push_back(refs[i].texts);
  }
  rouge::CorpusScores scores;
  if (a.multi_ref) {
    scores = rouge::evaluate_corpus_multi(p, r);
  } else {
    std::vector<std::string> single;
    for (const auto& v : r) single.push_back(v.front());
    scores = rouge::evaluate_corpus(p, single);
  }
  out << rouge::format_table(scores);
  if (!a.manifest.empty()) write_manifest(manifest, a.manifest);
  return kExitOk;
}

}  // namespace

std::string RunManifest::to_json() const {
  json j;
  j["command"] = command;
  j["config"] = json(config);
  j["seed"] = seed;
  j["started"] = started;
  j["finished"] = finished;
  j["outputs"] = outputs;
  return j.dump(2) + "\n";
}

std::uint64_t resolve_seed(const std::string& flag_value, const Settings& config) {
  if (!flag_value.empty()) return parse_u64("--seed", flag_value);
  if (const auto it = config.find("seed"); it != config.end()) return parse_u64("seed", it->second);
  if (const char* env = std::getenv("SUMFORGE_SEED"); env && *env) return parse_u64("SUMFORGE_SEED", env);
  return 0;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Extractive and abstractive summarization toolkit", "sumforge"};
  app.require_subcommand(1);

  ConvertArgs convert;
  auto* c = app.add_subcommand("convert", "Transcode paired article/summary files into story files");
  c->add_option("--input", convert.input, "corpus directory")->required();
  c->add_option("--encoding", convert.encoding, "source encoding")->capture_default_str();
  c->add_option("--out", convert.out, "output directory")->required();

  PreprocessArgs pre;
  auto* p = app.add_subcommand("preprocess", "Tokenize stories into labelled shards");
  p->add_option("--stories", pre.stories, "directory of .story files")->required();
  p->add_option("--vocab", pre.vocab, "WordPiece vocabulary")->required();
  p->add_option("--out", pre.out, "shard directory")->required();
  p->add_option("--max-positions", pre.max_positions, "source token budget")->capture_default_str();
  p->add_option("--shard-size", pre.shard_size, "examples per shard")->capture_default_str();
  p->add_option("--max-tgt-len", pre.max_tgt_len, "target token budget")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Fine-tune an extractive or abstractive model");
  t->add_option("--task", tr.task, "ext or abs")->required();
  t->add_option("--shards", tr.shards, "shard directory")->required();
  t->add_option("--out", tr.out, "output directory")->required();
  t->add_option("--init-encoder", tr.init_encoder, "pre-fit encoder checkpoint");
  tr.config.add_to(*t);

  PrefitArgs pf;
  auto* f = app.add_subcommand("prefit", "Masked-token pre-fit of an encoder");
  f->add_option("--shards", pf.shards, "shard directory")->required();
  f->add_option("--out", pf.out, "output directory")->required();
  pf.config.add_to(*f);

  SummarizeArgs sm;
  auto* s = app.add_subcommand("summarize", "Summarize a story file, stdin or a directory of stories");
  s->add_option("--task", sm.task, "ext or abs")->required();
  s->add_option("--checkpoint", sm.checkpoint, "model checkpoint")->required();
  s->add_option("--input", sm.input, "story file, directory, or - for stdin")->required();
  s->add_option("--vocab", sm.vocab, "vocabulary (default: vocab.txt beside the checkpoint)");
  s->add_option("--k", sm.k, "sentences to extract")->capture_default_str();
  s->add_option("--beam", sm.beam, "beam size")->capture_default_str();
  s->add_option("--max-len", sm.max_len, "maximum generated tokens")->capture_default_str();
  s->add_option("--min-len", sm.min_len, "minimum generated tokens")->capture_default_str();
  s->add_option("--alpha", sm.alpha, "length penalty exponent")->capture_default_str();
  s->add_flag("--no-trigram-blocking", sm.no_block, "disable trigram blocking");
  s->add_option("--references-out", sm.references_out, "directory mode: write reference summaries here");
  s->add_option("--manifest", sm.manifest, "write a run manifest");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "ROUGE-1/2/L of predictions against references");
  e->add_option("--predictions", ev.predictions, "JSON lines {id, text}")->required();
  e->add_option("--references", ev.references, "JSON lines {id, text}")->required();
  e->add_flag("--multi-ref", ev.multi_ref, "reference text may be a list; best F1 per metric");
  e->add_option("--manifest", ev.manifest, "write a run manifest");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    if (const CLI::App* sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front())
      err << sub->help();
    return kExitUsage;
  }

  try {
    if (c->parsed()) return cmd_convert(convert, out);
    if (p->parsed()) return cmd_preprocess(pre, out);
    if (t->parsed()) return cmd_train(tr, out);
    if (f->parsed()) return cmd_prefit(pf, out);
    if (s->parsed()) return cmd_summarize(sm, out);
    if (e->parsed()) return cmd_evaluate(ev, out);
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return exit_code_for(ex.code());
  } catch (const std::exception& ex) {
    err << "internal error: " << ex.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace sumforge::cli
