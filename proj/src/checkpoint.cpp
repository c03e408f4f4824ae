#include "fsam/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fsam {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'F', 'S', 'A', 'M', 'C', 'K', 'P', 'T'};

template <typename T>
void append_pod(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T read_pod(std::string_view bytes, std::size_t offset) {
  if (offset + sizeof(T) > bytes.size()) fail(ErrorKind::Integrity, "checkpoint truncated");
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

const Mat* Checkpoint::find(std::string_view name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return &m;
  return nullptr;
}

Checkpoint capture_checkpoint(const FSAMModel& model, Index epoch, double best_val_dsc, std::string rng_state,
                              std::string source_domain) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  for (const Parameter& p : model.parameters()) ckpt.tensors.emplace_back(p.name, p.value);
  ckpt.epoch = epoch;
  ckpt.best_val_dsc = best_val_dsc;
  ckpt.rng_state = std::move(rng_state);
  ckpt.source_domain = std::move(source_domain);
  return ckpt;
}

void restore_checkpoint(FSAMModel& model, const Checkpoint& checkpoint) {
  require(checkpoint.tensors.size() == model.parameters().size(), ErrorKind::Integrity,
          "checkpoint tensor count does not match the model");
  for (const auto& [name, value] : checkpoint.tensors) {
    Parameter* p = model.parameters().find(name);
    require(p != nullptr, ErrorKind::Integrity, "checkpoint has unknown tensor " + name);
    require(p->value.rows() == value.rows() && p->value.cols() == value.cols(), ErrorKind::Integrity,
            "checkpoint tensor " + name + " has the wrong shape");
    p->value = value;
  }
}

std::unique_ptr<FSAMModel> model_from_checkpoint(const Checkpoint& checkpoint) {
  auto model = build(checkpoint.config);
  restore_checkpoint(*model, checkpoint);
  return model;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string payload;
  nlohmann::json index = nlohmann::json::array();
  for (const auto& [name, m] : ckpt.tensors) {
    const std::size_t offset = payload.size();
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) append_pod<double>(payload, m(i, j));
    index.push_back({{"name", name},
                     {"dtype", "float64"},
                     {"shape", {m.rows(), m.cols()}},
                     {"offset", offset},
                     {"nbytes", payload.size() - offset}});
  }
  nlohmann::json manifest = {
      {"format_version", kCheckpointVersion},
      {"config", ckpt.config},
      {"epoch", ckpt.epoch},
      {"best_val_dsc", ckpt.best_val_dsc},
      {"rng_state", ckpt.rng_state},
      {"source_domain", ckpt.source_domain},
      {"payload_fnv1a64", hex64(fnv1a64(payload))},
      {"tensors", std::move(index)},
  };
  const std::string text = manifest.dump();

  std::string out(kMagic, sizeof(kMagic));
  append_pod<std::uint32_t>(out, kCheckpointVersion);
  append_pod<std::uint64_t>(out, text.size());
  out += text;
  out += payload;
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    fail(ErrorKind::Integrity, "not a checkpoint archive (bad magic)");
  const auto version = read_pod<std::uint32_t>(bytes, 8);
  require(version == kCheckpointVersion, ErrorKind::Integrity,
          "unsupported checkpoint format version " + std::to_string(version));
  const auto manifest_len = read_pod<std::uint64_t>(bytes, 12);
  require(20 + manifest_len <= bytes.size(), ErrorKind::Integrity, "checkpoint manifest truncated");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(20, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Integrity, std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  const std::string_view payload = bytes.substr(20 + manifest_len);

  Checkpoint ckpt;
  try {
    require(manifest.at("format_version").get<std::uint32_t>() == version, ErrorKind::Integrity,
            "checkpoint manifest version disagrees with header");
    require(manifest.at("payload_fnv1a64").get<std::string>() == hex64(fnv1a64(payload)), ErrorKind::Integrity,
            "checkpoint payload checksum mismatch");
    ckpt.config = manifest.at("config").get<FSAMConfig>();
    ckpt.epoch = manifest.at("epoch").get<Index>();
    ckpt.best_val_dsc = manifest.at("best_val_dsc").get<double>();
    ckpt.rng_state = manifest.at("rng_state").get<std::string>();
    ckpt.source_domain = manifest.value("source_domain", std::string{});
    for (const auto& entry : manifest.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto dtype = entry.at("dtype").get<std::string>();
      const auto shape = entry.at("shape").get<std::vector<Index>>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto nbytes = entry.at("nbytes").get<std::size_t>();
      require(shape.size() == 2, ErrorKind::Integrity, "tensor " + name + " is not rank 2");
      const std::size_t elem = dtype == "float64" ? 8 : dtype == "float32" ? 4 : 0;
      require(elem != 0, ErrorKind::Integrity, "tensor " + name + " has unsupported dtype " + dtype);
      require(nbytes == elem * static_cast<std::size_t>(shape[0] * shape[1]) && offset + nbytes <= payload.size(),
              ErrorKind::Integrity, "tensor " + name + " has an inconsistent extent");
      Mat m(shape[0], shape[1]);
      std::size_t pos = offset;
      for (Index i = 0; i < shape[0]; ++i) {
        for (Index j = 0; j < shape[1]; ++j, pos += elem) {
          m(i, j) = elem == 8 ? read_pod<double>(payload, pos) : static_cast<double>(read_pod<float>(payload, pos));
        }
      }
      ckpt.tensors.emplace_back(name, std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Integrity, std::string("checkpoint manifest is malformed: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::string bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::Io, "failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::MissingCheckpoint, "cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace fsam
