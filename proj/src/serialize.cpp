// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#include "clab/serialize.hpp"

#include <bit>
#include <fstream>

#include "clab/common.hpp"

namespace clab::io {

namespace {

constexpr std::uint32_t kFormatVersion = 1;
constexpr const char* kCheckpointMagic = "CLAB1";
constexpr const char* kAdapterMagic = "CLABA";
constexpr const char* kFisherMagic = "CLABF";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

void put_tensor(std::string& out, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::int64_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.data()) put_f64(out, v);
}

struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw InputError("container truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    std::uint32_t n = u32();
    need(n);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
  Tensor tensor() {
    std::uint32_t rank = u32();
    if (rank < 1 || rank > 2) throw InputError("container: bad tensor rank " + std::to_string(rank));
    std::vector<std::int64_t> shape;
    std::int64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      std::uint32_t d = u32();
      if (d == 0 || d > (1u << 24)) throw InputError("container: bad tensor dimension");
      shape.push_back(static_cast<std::int64_t>(d));
      numel *= d;
    }
    std::vector<double> data(static_cast<std::size_t>(numel));
    for (double& v : data) v = f64();
    return Tensor(std::move(shape), std::move(data));
  }
  void expect_magic(const char* magic) {
    need(5);
    if (bytes.compare(pos, 5, magic) != 0) {
      throw InputError(std::string("container: bad magic, expected ") + magic);
    }
    pos += 5;
  }
  void expect_end() const {
    if (pos != bytes.size()) throw InputError("container: trailing bytes");
  }
};

void put_config(std::string& out, const ModelConfig& cfg) {
  put_u32(out, static_cast<std::uint32_t>(cfg.d_model));
  put_u32(out, static_cast<std::uint32_t>(cfg.n_heads));
  put_u32(out, static_cast<std::uint32_t>(cfg.enc_layers));
  put_u32(out, static_cast<std::uint32_t>(cfg.dec_layers));
  put_u32(out, static_cast<std::uint32_t>(cfg.ff_mult));
  put_u32(out, static_cast<std::uint32_t>(cfg.max_src_len));
  put_u32(out, static_cast<std::uint32_t>(cfg.max_tgt_len));
  put_u32(out, static_cast<std::uint32_t>(cfg.feature_dim));
  put_u32(out, static_cast<std::uint32_t>(cfg.vocab.size()));
  for (const std::string& s : cfg.vocab) put_str(out, s);
}

ModelConfig get_config(Reader& r) {
  ModelConfig cfg;
  cfg.d_model = static_cast<std::int32_t>(r.u32());
  cfg.n_heads = static_cast<std::int32_t>(r.u32());
  cfg.enc_layers = static_cast<std::int32_t>(r.u32());
  cfg.dec_layers = static_cast<std::int32_t>(r.u32());
  cfg.ff_mult = static_cast<std::int32_t>(r.u32());
  cfg.max_src_len = static_cast<std::int32_t>(r.u32());
  cfg.max_tgt_len = static_cast<std::int32_t>(r.u32());
  cfg.feature_dim = static_cast<std::int32_t>(r.u32());
  std::uint32_t n = r.u32();
  if (n > 100000) throw InputError("container: implausible vocab size");
  cfg.vocab.clear();
  for (std::uint32_t i = 0; i < n; ++i) cfg.vocab.push_back(r.str());
  cfg.validate();
  return cfg;
}

void check_version(Reader& r) {
  std::uint32_t v = r.u32();
  if (v != kFormatVersion) {
    throw InputError("container: unsupported format version " + std::to_string(v));
  }
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (!in.good() && !in.eof()) throw InputError("failed reading " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out.good()) throw InputError("failed writing " + path.string());
}

std::uint64_t file_hash(const std::filesystem::path& path) {
  return fnv1a64(read_file(path));
}

std::string encode_checkpoint(const ModelConfig& cfg, const ParamStore& store) {
  std::string out;
  out += kCheckpointMagic;
  put_u32(out, kFormatVersion);
  put_config(out, cfg);
  out.push_back(store.lora_merged() ? 1 : 0);
  put_u32(out, static_cast<std::uint32_t>(store.size()));
  for (const std::string& name : store.names()) {
    put_str(out, name);
    put_tensor(out, store.at(name));
  }
  return out;
}

std::pair<ModelConfig, ParamStore> decode_checkpoint(const std::string& bytes) {
  Reader r{bytes};
  r.expect_magic(kCheckpointMagic);
  check_version(r);
  ModelConfig cfg = get_config(r);
  r.need(1);
  const bool merged = bytes[r.pos++] != 0;
  std::uint32_t count = r.u32();
  ParamStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    store.add(std::move(name), r.tensor());
  }
  store.set_lora_merged(merged);
  r.expect_end();
  return {cfg, std::move(store)};
}

void write_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                      const ParamStore& store) {
  write_file(path, encode_checkpoint(cfg, store));
}

std::pair<ModelConfig, ParamStore> read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

std::string encode_adapter(const ModelConfig& cfg, const AdapterState& state) {
  std::string out;
  out += kAdapterMagic;
  put_u32(out, kFormatVersion);
  put_config(out, cfg);
  out.push_back(static_cast<char>(state.method));
  put_u32(out, static_cast<std::uint32_t>(state.lora_rank));
  put_str(out, state.slct_code);
  switch (state.method) {
    case AdapterMethod::kFullFinetune:
      break;
    case AdapterMethod::kLora:
      put_u32(out, static_cast<std::uint32_t>(state.lora.size()));
      for (const auto& [name, pair] : state.lora) {
        put_str(out, name);
        put_tensor(out, pair.a);
        put_tensor(out, pair.b);
      }
      break;
    case AdapterMethod::kSoftPrompt:
      put_tensor(out, state.prompts);
      break;
    case AdapterMethod::kSoftLangCode:
      put_tensor(out, state.code_row);
      break;
  }
  return out;
}

std::pair<ModelConfig, AdapterState> decode_adapter(const std::string& bytes) {
  Reader r{bytes};
  r.expect_magic(kAdapterMagic);
  check_version(r);
  ModelConfig cfg = get_config(r);
  r.need(1);
  const auto method_raw = static_cast<std::uint8_t>(bytes[r.pos++]);
  if (method_raw > 3) throw InputError("adapter: bad method id");
  AdapterState state;
  state.method = static_cast<AdapterMethod>(method_raw);
  state.lora_rank = static_cast<std::int32_t>(r.u32());
  state.slct_code = r.str();
  switch (state.method) {
    case AdapterMethod::kFullFinetune:
      break;
    case AdapterMethod::kLora: {
      std::uint32_t count = r.u32();
      for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.str();
        LoraPair pair;
        pair.a = r.tensor();
        pair.b = r.tensor();
        state.lora.emplace_back(std::move(name), std::move(pair));
      }
      break;
    }
    case AdapterMethod::kSoftPrompt:
      state.prompts = r.tensor();
      break;
    case AdapterMethod::kSoftLangCode:
      state.code_row = r.tensor();
      break;
  }
  r.expect_end();
  return {cfg, std::move(state)};
}

void write_adapter(const std::filesystem::path& path, const ModelConfig& cfg,
                   const AdapterState& state) {
  write_file(path, encode_adapter(cfg, state));
}

std::pair<ModelConfig, AdapterState> read_adapter(const std::filesystem::path& path) {
  return decode_adapter(read_file(path));
}

std::string encode_fisher(const FisherDiagonal& fisher) {
  std::string out;
  out += kFisherMagic;
  put_u32(out, kFormatVersion);
  put_u64(out, static_cast<std::uint64_t>(fisher.sample_count));
  put_str(out, fisher.source_tag);
  put_u32(out, static_cast<std::uint32_t>(fisher.values.size()));
  for (const std::string& name : fisher.values.names()) {
    put_str(out, name);
    put_tensor(out, fisher.values.at(name));
  }
  return out;
}

FisherDiagonal decode_fisher(const std::string& bytes) {
  Reader r{bytes};
  r.expect_magic(kFisherMagic);
  check_version(r);
  FisherDiagonal fisher;
  fisher.sample_count = static_cast<std::int64_t>(r.u64());
  fisher.source_tag = r.str();
  std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    Tensor t = r.tensor();
    for (double v : t.data()) {
      if (v < 0.0) throw InputError("fisher: negative entry in " + name);
    }
    fisher.values.add(std::move(name), std::move(t));
  }
  r.expect_end();
  return fisher;
}

void write_fisher(const std::filesystem::path& path, const FisherDiagonal& fisher) {
  write_file(path, encode_fisher(fisher));
}

FisherDiagonal read_fisher(const std::filesystem::path& path) {
  return decode_fisher(read_file(path));
}

}  // namespace clab::io
