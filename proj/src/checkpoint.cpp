#include "sumforge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include <json.hpp>

#include "sumforge/error.hpp"
#include "sumforge/ingest.hpp"

namespace sumforge::checkpoint {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

const char* kind_name(Kind kind) noexcept {
  switch (kind) {
    case Kind::Extractive: return "ext";
    case Kind::Abstractive: return "abs";
    case Kind::Encoder: return "encoder";
  }
  return "?";
}

model::TaskKind task_of(Kind kind) {
  if (kind == Kind::Encoder) throw Error(Errc::ModelKindMismatch, "encoder-only checkpoint");
  return kind == Kind::Extractive ? model::TaskKind::Extractive : model::TaskKind::Abstractive;
}

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'S', 'U', 'M', 'F'};

Kind parse_kind(const std::string& s) {
  if (s == "ext") return Kind::Extractive;
  if (s == "abs") return Kind::Abstractive;
  if (s == "encoder") return Kind::Encoder;
  throw Error(Errc::FormatVersionMismatch, "unknown checkpoint kind '" + s + "'");
}

json config_json(const model::ModelConfig& c) {
  json j;
  j["vocab_size"] = c.vocab_size;
  j["d_model"] = c.d_model;
  j["n_heads"] = c.n_heads;
  j["d_ff"] = c.d_ff;
  j["n_enc_layers"] = c.n_enc_layers;
  j["n_dec_layers"] = c.n_dec_layers;
  j["max_positions"] = c.max_positions;
  j["dropout"] = c.dropout;
  j["pretrained_encoder"] = c.pretrained_encoder;
  return j;
}

model::ModelConfig config_from_json(const json& j) {
  model::ModelConfig c;
  try {
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.n_enc_layers = j.at("n_enc_layers").get<std::size_t>();
    c.n_dec_layers = j.at("n_dec_layers").get<std::size_t>();
    c.max_positions = j.at("max_positions").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.pretrained_encoder = j.at("pretrained_encoder").get<bool>();
  } catch (const json::exception& e) {
    throw Error(Errc::FormatVersionMismatch, std::string("bad config block: ") + e.what());
  }
  return c;
}

void put_u32(std::string& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  bool done() const noexcept { return pos_ == bytes_.size(); }

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw Error(Errc::IoError, std::string("checkpoint truncated in ") + what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    std::memcpy(&v, take(4, what).data(), 4);
    return v;
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::pair<std::string, Shape>> expected_layout(Kind kind, const model::ModelConfig& config) {
  if (kind == Kind::Encoder) return model::encoder_layout(config);
  return model::parameter_layout(task_of(kind), config);
}

}  // namespace

std::string serialize(const Checkpoint& ckpt) {
  json header;
  header["format"] = "sumforge";
  header["kind"] = kind_name(ckpt.kind);
  header["config"] = config_json(ckpt.config);
  header["step"] = ckpt.step;
  header["seed"] = ckpt.seed;
  const std::string text = header.dump();

  std::string out(kMagic, 4);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const NamedArray& a : ckpt.arrays) {
    if (numel(a.shape) != a.data.size()) throw Error(Errc::ShapeMismatch, a.name);
    put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    put_u32(out, static_cast<std::uint32_t>(a.shape.size()));
    for (std::size_t d : a.shape) put_u32(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(a.data.data()), a.data.size() * sizeof(float));
  }
  return out;
}

Checkpoint deserialize(std::string_view bytes) {
  Reader in(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error(Errc::FormatVersionMismatch, "missing SUMF magic");
  in.take(4, "magic");
  const std::uint32_t version = in.u32("version");
  if (version != kFormatVersion)
    throw Error(Errc::FormatVersionMismatch, "version " + std::to_string(version) + ", expected " +
                                                 std::to_string(kFormatVersion));
  const std::uint32_t header_len = in.u32("header length");
  const json header = json::parse(in.take(header_len, "header"), nullptr, false);
  if (header.is_discarded() || !header.is_object() || !header.contains("config"))
    throw Error(Errc::FormatVersionMismatch, "malformed config block");

  Checkpoint ckpt;
  ckpt.kind = parse_kind(header.value("kind", std::string{}));
  ckpt.config = config_from_json(header["config"]);
  ckpt.step = header.value("step", std::uint64_t{0});
  ckpt.seed = header.value("seed", std::uint64_t{0});
  try {
    ckpt.config.validate();
  } catch (const Error& e) {
    throw Error(Errc::ShapeMismatch, e.what());
  }

  std::map<std::string, Shape> expected;
  for (auto& [name, shape] : expected_layout(ckpt.kind, ckpt.config)) expected.emplace(name, shape);

  while (!in.done()) {
    NamedArray a;
    const std::uint32_t name_len = in.u32("name length");
    a.name = std::string(in.take(name_len, "name"));
    const std::uint32_t rank = in.u32("rank");
    if (rank > 8) throw Error(Errc::FormatVersionMismatch, "implausible rank for " + a.name);
    for (std::uint32_t i = 0; i < rank; ++i) a.shape.push_back(in.u32("dims"));
    auto it = expected.find(a.name);
    if (it == expected.end())
      throw Error(Errc::ShapeMismatch, "unexpected or duplicate parameter " + a.name);
    if (it->second != a.shape)
      throw Error(Errc::ShapeMismatch, a.name + " is " + shape_string(a.shape) + ", config implies " +
                                           shape_string(it->second));
    expected.erase(it);
    const std::size_t n = numel(a.shape);
    const std::string_view payload = in.take(n * sizeof(float), "payload");
    a.data.resize(n);
    std::memcpy(a.data.data(), payload.data(), payload.size());
    ckpt.arrays.push_back(std::move(a));
  }
  if (!expected.empty()) throw Error(Errc::ShapeMismatch, "missing parameter " + expected.begin()->first);
  return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  ingest::write_file(path, serialize(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) { return deserialize(ingest::read_file(path)); }

namespace {

template <typename Scalar>
Checkpoint snapshot_filtered(const model::SummarizationModel<Scalar>& m, Kind kind, bool encoder_only,
                             std::uint64_t step, std::uint64_t seed) {
  Checkpoint ckpt;
  ckpt.kind = kind;
  ckpt.config = m.config();
  ckpt.step = step;
  ckpt.seed = seed;
  for (const auto& [name, t] : m.parameters()) {
    if (encoder_only && !model::is_encoder_parameter(name)) continue;
    NamedArray a{name, t.shape(), {}};
    a.data.reserve(t.numel());
    for (Scalar v : t.data()) a.data.push_back(static_cast<float>(v));
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

}  // namespace

template <typename Scalar>
Checkpoint snapshot(const model::SummarizationModel<Scalar>& m, std::uint64_t step, std::uint64_t seed) {
  const Kind kind = m.kind() == model::TaskKind::Extractive ? Kind::Extractive : Kind::Abstractive;
  return snapshot_filtered(m, kind, false, step, seed);
}

template <typename Scalar>
Checkpoint encoder_snapshot(const model::SummarizationModel<Scalar>& m, std::uint64_t step, std::uint64_t seed) {
  return snapshot_filtered(m, Kind::Encoder, true, step, seed);
}

template <typename Scalar>
void save_checkpoint(const model::SummarizationModel<Scalar>& m, const std::filesystem::path& path,
                     std::uint64_t step, std::uint64_t seed) {
  write_checkpoint(snapshot(m, step, seed), path);
}

template <typename Scalar>
model::SummarizationModel<Scalar> to_model(const Checkpoint& ckpt) {
  auto m = model::SummarizationModel<Scalar>::build(task_of(ckpt.kind), ckpt.config, 0);
  for (const NamedArray& a : ckpt.arrays) {
    auto t = m.parameter(a.name);
    if (t.shape() != a.shape) throw Error(Errc::ShapeMismatch, a.name);
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < a.data.size(); ++i) dst[i] = static_cast<Scalar>(a.data[i]);
  }
  return m;
}

template <typename Scalar>
model::SummarizationModel<Scalar> load_checkpoint(const std::filesystem::path& path) {
  return to_model<Scalar>(read_checkpoint(path));
}

template <typename Scalar>
void load_encoder(model::SummarizationModel<Scalar>& m, const Checkpoint& ckpt) {
  std::size_t copied = 0;
  for (const NamedArray& a : ckpt.arrays) {
    if (!model::is_encoder_parameter(a.name)) continue;
    auto t = m.parameter(a.name);
    if (t.shape() != a.shape)
      throw Error(Errc::ShapeMismatch, a.name + " is " + shape_string(a.shape) + " in checkpoint, model has " +
                                           shape_string(t.shape()));
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < a.data.size(); ++i) dst[i] = static_cast<Scalar>(a.data[i]);
    ++copied;
  }
  const std::size_t expected = model::encoder_layout(m.config()).size();
  if (copied != expected)
    throw Error(Errc::ShapeMismatch, "checkpoint provides " + std::to_string(copied) + " of " +
                                         std::to_string(expected) + " encoder parameters");
  m.set_pretrained_encoder(true);
}

#define SUMFORGE_INSTANTIATE(S)                                                                        \
  template Checkpoint snapshot(const model::SummarizationModel<S>&, std::uint64_t, std::uint64_t);     \
  template Checkpoint encoder_snapshot(const model::SummarizationModel<S>&, std::uint64_t,             \
                                       std::uint64_t);                                                 \
  template void save_checkpoint(const model::SummarizationModel<S>&, const std::filesystem::path&,     \
                                std::uint64_t, std::uint64_t);                                         \
  template model::SummarizationModel<S> to_model<S>(const Checkpoint&);                                \
  template model::SummarizationModel<S> load_checkpoint<S>(const std::filesystem::path&);              \
  template void load_encoder(model::SummarizationModel<S>&, const Checkpoint&);

SUMFORGE_INSTANTIATE(float)
SUMFORGE_INSTANTIATE(double)
#undef SUMFORGE_INSTANTIATE

}  // namespace sumforge::checkpoint
