// SPDX-License-Identifier: Apache-2.0
#include "hmt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "hmt/error.hpp"

namespace hmt {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'H', 'M', 'T', '1'};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    T v;
    std::memcpy(&v, take(sizeof(T), what), sizeof(T));
    return v;
  }
  const std::uint8_t* take(std::size_t n, const char* what) {
    if (n > bytes_.size() - offset_) {
      raise(ErrorKind::kFormat, std::string("checkpoint truncated at byte offset ") + std::to_string(offset_) +
                                    " while reading " + what);
    }
    const std::uint8_t* p = bytes_.data() + offset_;
    offset_ += n;
    return p;
  }
  std::size_t offset() const { return offset_; }
  bool done() const { return offset_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t offset_ = 0;
};

void put_tensor(Writer& w, const std::string& name, const Shape& shape, std::span<const double> values) {
  if (name.size() > 0xffff) raise(ErrorKind::kFormat, "tensor name too long: " + name);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
  w.put_bytes(name.data(), name.size());
  w.put<std::uint8_t>(static_cast<std::uint8_t>(shape.size()));
  for (std::size_t d : shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  w.put_bytes(values.data(), values.size() * sizeof(double));
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(Checkpoint::kVersion);
  const std::string text = ckpt.config.to_text();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.put_bytes(text.data(), text.size());

  std::uint32_t count = 0;
  for (const auto& p : ckpt.params) {
    ++count;
    if (ckpt.optimizer.first_moment.count(p.name)) ++count;
    if (ckpt.optimizer.second_moment.count(p.name)) ++count;
  }
  w.put<std::uint32_t>(count);
  for (const auto& p : ckpt.params) {
    put_tensor(w, p.name, p.tensor.shape(), p.tensor.data());
    if (auto it = ckpt.optimizer.first_moment.find(p.name); it != ckpt.optimizer.first_moment.end())
      put_tensor(w, p.name + ".m1", p.tensor.shape(), it->second);
    if (auto it = ckpt.optimizer.second_moment.find(p.name); it != ckpt.optimizer.second_moment.end())
      put_tensor(w, p.name + ".m2", p.tensor.shape(), it->second);
  }
  for (std::uint64_t word : ckpt.rng) w.put<std::uint64_t>(word);
  w.put<std::uint64_t>(ckpt.step);
  w.put<std::uint64_t>(ckpt.optimizer.step);
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const std::uint8_t* magic = r.take(4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) raise(ErrorKind::kFormat, "checkpoint: bad magic at byte offset 0");
  const std::size_t version_at = r.offset();
  const auto version = r.get<std::uint32_t>("version");
  if (version != Checkpoint::kVersion) {
    raise(ErrorKind::kFormat, "checkpoint: unsupported version " + std::to_string(version) + " at byte offset " +
                                  std::to_string(version_at) + " (expected " +
                                  std::to_string(Checkpoint::kVersion) + ")");
  }
  Checkpoint ckpt;
  const auto text_len = r.get<std::uint32_t>("config length");
  const std::size_t text_at = r.offset();
  const auto* text = reinterpret_cast<const char*>(r.take(text_len, "config text"));
  try {
    std::ostringstream ignored;
    ckpt.config = parse_config_text(std::string(text, text_len), {}, ignored, "checkpoint");
  } catch (const Error& e) {
    raise(ErrorKind::kFormat,
          "checkpoint: invalid config text at byte offset " + std::to_string(text_at) + ": " + e.what());
  }

  const auto count = r.get<std::uint32_t>("tensor count");
  std::map<std::string, std::vector<double>> m1, m2;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::size_t at = r.offset();
    const auto name_len = r.get<std::uint16_t>("tensor name length");
    std::string name(reinterpret_cast<const char*>(r.take(name_len, "tensor name")), name_len);
    const auto rank = r.get<std::uint8_t>("tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>("tensor dims");
    const std::size_t n = shape_size(shape);
    if (n > (bytes.size() - r.offset()) / sizeof(double)) {
      raise(ErrorKind::kFormat, "checkpoint truncated at byte offset " + std::to_string(r.offset()) +
                                    " in payload of tensor '" + name + "' (record at " + std::to_string(at) + ")");
    }
    std::vector<double> values(n);
    std::memcpy(values.data(), r.take(n * sizeof(double), "tensor payload"), n * sizeof(double));
    if (ends_with(name, ".m1")) {
      m1[name.substr(0, name.size() - 3)] = std::move(values);
    } else if (ends_with(name, ".m2")) {
      m2[name.substr(0, name.size() - 3)] = std::move(values);
    } else {
      ckpt.params.push_back({name, Tensor::from(shape, std::move(values))});
    }
  }
  for (auto& word : ckpt.rng) word = r.get<std::uint64_t>("rng state");
  ckpt.step = r.get<std::uint64_t>("step counter");
  ckpt.optimizer.step = r.get<std::uint64_t>("optimizer step");
  if (!r.done()) {
    raise(ErrorKind::kFormat, "checkpoint: trailing bytes at byte offset " + std::to_string(r.offset()));
  }
  for (auto& [name, values] : m1) {
    bool known = false;
    for (const auto& p : ckpt.params) known = known || p.name == name;
    if (!known) raise(ErrorKind::kFormat, "checkpoint: moment for unknown parameter '" + name + "'");
  }
  ckpt.optimizer.first_moment = std::move(m1);
  ckpt.optimizer.second_moment = std::move(m2);
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  const auto bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorKind::kIo, "cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) raise(ErrorKind::kIo, "short write to checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::kIo, "cannot read checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint capture(const RunConfig& config, const Trainer& trainer) {
  Checkpoint ckpt;
  ckpt.config = config;
  for (const auto& p : trainer.trainable()) ckpt.params.push_back({p.name, p.tensor.detach()});
  ckpt.optimizer = trainer.optimizer();
  ckpt.rng = trainer.rng().state();
  ckpt.step = trainer.steps_done();
  return ckpt;
}

HmtModel model_from_checkpoint(const Checkpoint& ckpt, const BackboneConfig& expected, const HmtConfig& hmt,
                               std::uint64_t fresh_seed) {
  const BackboneConfig& have = ckpt.config.backbone;
  std::string mismatched;
  auto check = [&](const char* key, std::size_t a, std::size_t b) {
    if (a != b) {
      mismatched += std::string(mismatched.empty() ? "" : ", ") + key + " (checkpoint " + std::to_string(a) +
                    ", requested " + std::to_string(b) + ")";
    }
  };
  check("d_model", have.d_model, expected.d_model);
  check("n_layers", have.n_layers, expected.n_layers);
  check("n_heads", have.n_heads, expected.n_heads);
  check("d_ff", have.d_ff, expected.d_ff);
  check("vocab_size", have.vocab_size, expected.vocab_size);
  check("max_pos", have.max_pos, expected.max_pos);
  if (!mismatched.empty()) raise(ErrorKind::kConfig, "incompatible checkpoint: " + mismatched);

  HmtModel model = HmtModel::create(have, hmt, fresh_seed);
  std::map<std::string, const Tensor*> stored;
  for (const auto& p : ckpt.params) stored[p.name] = &p.tensor;
  for (auto& p : model.parameters(true)) {
    auto it = stored.find(p.name);
    if (it == stored.end()) {
      if (p.name.rfind("backbone.", 0) == 0) {
        raise(ErrorKind::kFormat, "checkpoint lacks backbone parameter '" + p.name + "'");
      }
      continue;
    }
    if (it->second->shape() != p.tensor.shape()) {
      raise(ErrorKind::kConfig, "incompatible checkpoint: parameter '" + p.name + "' has shape " +
                                    shape_string(it->second->shape()) + ", model expects " +
                                    shape_string(p.tensor.shape()));
    }
    Tensor target = p.tensor;
    std::copy(it->second->data().begin(), it->second->data().end(), target.mutable_data().begin());
  }
  return model;
}

Trainer resume_trainer(const Checkpoint& ckpt, WindowSampler sampler) {
  HmtModel model = model_from_checkpoint(ckpt, ckpt.config.backbone, stage_hmt_config(ckpt.config),
                                         derive_seed(ckpt.config.train.seed, SeedOffsets::kInit));
  Trainer trainer(std::move(model), ckpt.config.train, std::move(sampler));
  trainer.optimizer() = ckpt.optimizer;
  trainer.rng().set_state(ckpt.rng);
  trainer.set_steps_done(ckpt.step);
  return trainer;
}

}  // namespace hmt
