#include "ebll/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <regex>

namespace ebll::checkpoint {

namespace {

using Kind = CheckpointError::Kind;

template <class T>
void put_le(std::vector<unsigned char>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
  explicit Reader(const std::vector<unsigned char>& b) : bytes_(b) {}

  template <class T>
  T get_le(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(std::size_t n) {
    need(n, "array name");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(Kind::Truncated, std::string("checkpoint truncated while reading ") + what);
    }
  }

private:
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

model::LayerStack stack_from(const Archive& archive, const std::string& prefix, std::size_t in, bool relu_last) {
  std::vector<model::Dense> layers;
  for (std::size_t i = 0;; ++i) {
    const std::string base = prefix + "." + std::to_string(i);
    const NamedArray* w = nullptr;
    const NamedArray* b = nullptr;
    for (const auto& a : archive) {
      if (a.name == base + ".weight") w = &a;
      if (a.name == base + ".bias") b = &a;
    }
    if (!w && !b) break;
    if (!w || !b) throw CheckpointError(Kind::Schema, "checkpoint layer " + base + " is missing weight or bias");
    layers.push_back({nn::Parameter(w->name, w->value), nn::Parameter(b->name, b->value), model::Activation::Relu});
  }
  if (!relu_last && !layers.empty()) layers.back().activation = model::Activation::None;
  try {
    return model::LayerStack(in, std::move(layers));
  } catch (const DimensionError& e) {
    throw CheckpointError(Kind::Schema, e.what());
  }
}

std::vector<std::size_t> widths(const model::LayerStack& s, bool drop_last) {
  std::vector<std::size_t> out;
  for (const auto& l : s.layers()) out.push_back(l.out_dim());
  if (drop_last && !out.empty()) out.pop_back();
  return out;
}

}  // namespace

std::vector<unsigned char> encode(const Archive& archive) {
  std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint16_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(archive.size()));
  for (const auto& a : archive) {
    if (a.name.size() > 0xffff) throw CheckpointError(Kind::Schema, "array name too long");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(a.name.size()));
    out.insert(out.end(), a.name.begin(), a.name.end());
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(a.value.rank()));
    for (auto d : a.value.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : a.value.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Archive decode(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 4) throw CheckpointError(Kind::Truncated, "checkpoint truncated while reading magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError(Kind::BadMagic, "not an EBLL checkpoint (bad magic)");
  Reader r(bytes);
  (void)r.get_string(4);
  const auto version = r.get_le<std::uint16_t>("version");
  if (version != kVersion) {
    throw CheckpointError(Kind::VersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " +
                                                     std::to_string(kVersion));
  }
  const auto count = r.get_le<std::uint32_t>("array count");
  Archive archive;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get_le<std::uint16_t>("name length");
    std::string name = r.get_string(name_len);
    const auto rank = r.get_le<std::uint8_t>("rank");
    if (rank == 0 || rank > 2) throw CheckpointError(Kind::Schema, "array " + name + " has unsupported rank");
    std::vector<std::size_t> shape;
    std::size_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      const auto d = r.get_le<std::uint32_t>("dimension");
      if (d == 0) throw CheckpointError(Kind::Schema, "array " + name + " has a zero dimension");
      shape.push_back(d);
      n *= d;
    }
    r.need(n * 8, "array payload");
    std::vector<double> data(n);
    for (auto& v : data) v = std::bit_cast<double>(r.get_le<std::uint64_t>("array payload"));
    archive.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return archive;
}

void save(const Archive& archive, const std::filesystem::path& path) {
  const auto bytes = encode(archive);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(Kind::Io, "cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(Kind::Io, "failed writing checkpoint " + path.string());
}

Archive load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::Io, "cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode(bytes);
}

const Tensor& find(const Archive& archive, const std::string& name) {
  for (const auto& a : archive) {
    if (a.name == name) return a.value;
  }
  throw CheckpointError(Kind::Schema, "checkpoint has no array named " + name);
}

Archive to_archive(const model::TaskModel& m) {
  Archive out;
  for (const auto* p : m.all_parameters()) out.push_back({p->id, p->value});
  return out;
}

model::TaskModel model_from_archive(const Archive& archive) {
  const Tensor& first = find(archive, "F.0.weight");
  const std::size_t input_dim = first.shape()[1];
  auto features = stack_from(archive, "F", input_dim, true);
  auto shared = stack_from(archive, "T", features.out_dim(), true);

  std::map<int, model::LayerStack> heads;
  const std::regex head_name(R"(head(\d+)\.0\.weight)");
  std::smatch match;
  for (const auto& a : archive) {
    if (std::regex_match(a.name, match, head_name)) {
      const int t = std::stoi(match[1].str());
      heads.emplace(t, stack_from(archive, "head" + std::to_string(t), shared.out_dim(), false));
    }
  }
  model::Architecture arch;
  arch.input_dim = input_dim;
  arch.feature_widths = widths(features, false);
  arch.shared_widths = widths(shared, false);
  arch.head_hidden_widths = heads.empty() ? std::vector<std::size_t>{} : widths(heads.begin()->second, true);
  try {
    return model::TaskModel::assemble(arch, std::move(features), std::move(shared), std::move(heads));
  } catch (const std::exception& e) {
    throw CheckpointError(Kind::Schema, std::string("checkpoint does not describe a valid model: ") + e.what());
  }
}

Archive to_archive(const ae::Autoencoder& ae, const std::string& prefix) {
  const auto ps = ae.parameters();
  return {{prefix + ".enc.weight", ps[0]->value},
          {prefix + ".enc.bias", ps[1]->value},
          {prefix + ".dec.weight", ps[2]->value},
          {prefix + ".dec.bias", ps[3]->value}};
}

ae::Autoencoder autoencoder_from_archive(const Archive& archive, const std::string& prefix) {
  try {
    return ae::Autoencoder(nn::Parameter("ae.enc.weight", find(archive, prefix + ".enc.weight")),
                           nn::Parameter("ae.enc.bias", find(archive, prefix + ".enc.bias")),
                           nn::Parameter("ae.dec.weight", find(archive, prefix + ".dec.weight")),
                           nn::Parameter("ae.dec.bias", find(archive, prefix + ".dec.bias")));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(Kind::Schema, std::string("invalid autoencoder arrays: ") + e.what());
  }
}

Archive to_archive(const lifelong::TaskMemory& memory) {
  Archive out;
  out.push_back({"mem.count", scalar(static_cast<double>(memory.entries.size()))});
  for (std::size_t i = 0; i < memory.entries.size(); ++i) {
    const auto& e = memory.entries[i];
    const std::string base = "mem." + std::to_string(i);
    out.push_back({base + ".task", scalar(e.task_id)});
    out.push_back({base + ".alpha", scalar(e.alpha)});
    if (!e.targets.empty()) {
      std::vector<double> hi, lo;
      for (auto id : e.targets.ids()) {
        hi.push_back(static_cast<double>(id >> 32));
        lo.push_back(static_cast<double>(id & 0xffffffffULL));
      }
      out.push_back({base + ".ids_hi", Tensor::vector(std::move(hi))});
      out.push_back({base + ".ids_lo", Tensor::vector(std::move(lo))});
      out.push_back({base + ".targets", e.targets.rows()});
      if (!e.codes.empty()) out.push_back({base + ".codes", e.codes.rows()});
    }
    if (e.encoder) {
      for (auto& a : to_archive(*e.encoder, base + ".ae")) out.push_back(std::move(a));
    }
  }
  return out;
}

lifelong::TaskMemory memory_from_archive(const Archive& archive) {
  lifelong::TaskMemory memory;
  const auto count = static_cast<std::size_t>(find(archive, "mem.count")[0]);
  auto has = [&archive](const std::string& name) {
    for (const auto& a : archive) {
      if (a.name == name) return true;
    }
    return false;
  };
  for (std::size_t i = 0; i < count; ++i) {
    const std::string base = "mem." + std::to_string(i);
    lifelong::PastTask e;
    e.task_id = static_cast<int>(find(archive, base + ".task")[0]);
    e.alpha = find(archive, base + ".alpha")[0];
    if (has(base + ".targets")) {
      const Tensor& hi = find(archive, base + ".ids_hi");
      const Tensor& lo = find(archive, base + ".ids_lo");
      std::vector<std::uint64_t> ids(hi.size());
      for (std::size_t k = 0; k < ids.size(); ++k) {
        ids[k] = (static_cast<std::uint64_t>(hi[k]) << 32) | static_cast<std::uint64_t>(lo[k]);
      }
      e.targets = lifelong::RecordTable(ids, find(archive, base + ".targets"));
      if (has(base + ".codes")) e.codes = lifelong::RecordTable(ids, find(archive, base + ".codes"));
    }
    if (has(base + ".ae.enc.weight")) {
      e.encoder = autoencoder_from_archive(archive, base + ".ae");
      e.encoder->set_frozen(true);
    }
    memory.entries.push_back(std::move(e));
  }
  return memory;
}

std::uint64_t checksum(const Archive& archive, const std::vector<std::string>& prefixes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& a : archive) {
    bool match = false;
    for (const auto& p : prefixes) match = match || a.name.rfind(p, 0) == 0;
    if (!match) continue;
    for (double v : a.value.data()) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      for (int k = 0; k < 8; ++k) {
        h ^= (bits >> (8 * k)) & 0xff;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

}  // namespace ebll::checkpoint
