#include "mmnet/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "mmnet/errors.hpp"

namespace mmnet {

namespace {

constexpr char kMagic[5] = {'M', 'M', 'N', 'K', '1'};

template <typename U>
void put(std::string& out, U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}
  bool done() const { return pos_ == bytes_.size(); }

  template <typename U>
  U get() {
    need(sizeof(U));
    char buf[sizeof(U)];
    std::memcpy(buf, bytes_.data() + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
    pos_ += sizeof(U);
    U v;
    std::memcpy(&v, buf, sizeof(U));
    return v;
  }

  std::string bytes(uint64_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(uint64_t n) const {
    if (n > bytes_.size() - pos_) throw InputError("checkpoint " + path_ + " is truncated");
  }
  std::string bytes_;
  std::string path_;
  size_t pos_ = 0;
};

}  // namespace

void write_file_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("failed writing " + tmp.string());
  }
  fs::rename(tmp, target);
}

TrainConfig Checkpoint::train_config() const {
  TrainConfig cfg = config.get<TrainConfig>();
  cfg.validate();
  return cfg;
}

template <typename T>
void save_checkpoint(const std::string& path, const TrainConfig& cfg, const ParamStore<T>& params) {
  std::string out(kMagic, sizeof(kMagic));
  const std::string config = nlohmann::json(cfg).dump();
  put<uint64_t>(out, config.size());
  out += config;
  for (const Param<T>* p : params.all()) {
    put<uint32_t>(out, static_cast<uint32_t>(p->name.size()));
    out += p->name;
    put<uint8_t>(out, std::is_same_v<T, double> ? 1 : 0);
    put<uint32_t>(out, static_cast<uint32_t>(p->value.shape.size()));
    for (int d : p->value.shape) put<uint32_t>(out, static_cast<uint32_t>(d));
    for (T v : p->value.data) put<T>(out, v);
  }
  write_file_atomic(path, out);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str(), path);
  if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw InputError(path + " is not a checkpoint (bad magic)");
  }
  Checkpoint ck;
  const uint64_t len = r.get<uint64_t>();
  try {
    ck.config = nlohmann::json::parse(r.bytes(len));
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("checkpoint " + path + " has a malformed config: " + e.what());
  }
  while (!r.done()) {
    CheckpointTensor t;
    t.name = r.bytes(r.get<uint32_t>());
    const uint8_t dtype = r.get<uint8_t>();
    if (dtype > 1) throw InputError("checkpoint tensor '" + t.name + "' has unknown dtype");
    t.f64 = dtype == 1;
    const uint32_t rank = r.get<uint32_t>();
    if (rank > 8) throw InputError("checkpoint tensor '" + t.name + "' has implausible rank");
    int64_t count = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      t.shape.push_back(static_cast<int>(r.get<uint32_t>()));
      count *= t.shape.back();
    }
    t.values.resize(static_cast<size_t>(count));
    for (double& v : t.values) v = t.f64 ? r.get<double>() : static_cast<double>(r.get<float>());
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

template <typename T>
void load_params(const Checkpoint& ck, ParamStore<T>& params) {
  std::unordered_map<std::string, const CheckpointTensor*> by_name;
  for (const CheckpointTensor& t : ck.tensors) by_name[t.name] = &t;
  if (by_name.size() != params.all().size()) {
    throw InputError("checkpoint holds " + std::to_string(by_name.size()) + " tensors, model expects " +
                     std::to_string(params.all().size()));
  }
  for (Param<T>* p : params.all()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw InputError("checkpoint is missing parameter '" + p->name + "'");
    if (it->second->shape != p->value.shape) {
      throw InputError("checkpoint parameter '" + p->name + "' has shape " + shape_str(it->second->shape) +
                       ", model expects " + shape_str(p->value.shape));
    }
    for (size_t i = 0; i < p->value.data.size(); ++i) p->value.data[i] = static_cast<T>(it->second->values[i]);
  }
}

template void save_checkpoint(const std::string&, const TrainConfig&, const ParamStore<float>&);
template void save_checkpoint(const std::string&, const TrainConfig&, const ParamStore<double>&);
template void load_params(const Checkpoint&, ParamStore<float>&);
template void load_params(const Checkpoint&, ParamStore<double>&);

}  // namespace mmnet
