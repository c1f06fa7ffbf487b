#include "xpro/checkpoint.hpp"

#include <cstdint>
#include <fstream>

namespace xpro {

Tensor& ParamStore::add(const std::string& name, Tensor t, ParamGroup group) {
  if (params_.count(name)) throw ContractError("ParamStore: duplicate parameter " + name);
  groups_[name] = group;
  return params_.emplace(name, std::move(t)).first->second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("ParamStore: unknown parameter " + name);
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("ParamStore: unknown parameter " + name);
  return it->second;
}

ParamGroup ParamStore::group(const std::string& name) const {
  auto it = groups_.find(name);
  if (it == groups_.end()) throw ContractError("ParamStore: unknown parameter " + name);
  return it->second;
}

void ParamStore::watch_all(Tape& tape) {
  for (auto& [name, t] : params_) tape.watch(t);
}

void ParamStore::unbind_all() {
  for (auto& [name, t] : params_) t.unbind();
}

namespace {

template <class T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("checkpoint " + path + ": truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const ParamStore& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint: cannot open " + path + " for writing");
  out << kCheckpointMagic << '\n';
  write_pod<std::uint64_t>(out, store.size());
  for (const auto& [name, t] : store.items()) {
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.numel())));
  }
  if (!out) throw DataError("checkpoint: write failed for " + path);
}

ParamStore load_checkpoint(const std::string& path,
                           const std::map<std::string, ParamGroup>* group_hint) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open " + path);
  std::string magic;
  std::getline(in, magic);
  if (magic != kCheckpointMagic)
    throw DataError("checkpoint " + path + ": bad magic '" + magic + "'");
  const auto count = read_pod<std::uint64_t>(in, path);
  ParamStore store;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw DataError("checkpoint " + path + ": truncated file");
    const auto rank = read_pod<std::uint32_t>(in, path);
    Shape shape;
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = read_pod<std::uint64_t>(in, path);
      shape.push_back(static_cast<int>(dim));
      numel *= static_cast<std::int64_t>(dim);
    }
    std::vector<double> data(static_cast<size_t>(numel));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(sizeof(double) * data.size()));
    if (!in) throw DataError("checkpoint " + path + ": truncated file");
    ParamGroup g = ParamGroup::EncoderDecoder;
    if (group_hint) {
      auto it = group_hint->find(name);
      if (it != group_hint->end()) g = it->second;
    }
    store.add(name, Tensor(std::move(shape), std::move(data)), g);
  }
  return store;
}

}  // namespace xpro
