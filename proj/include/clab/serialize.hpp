// Copyright 2026 clab contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>

#include "clab/adapters.hpp"
#include "clab/config.hpp"
#include "clab/continual.hpp"
#include "clab/param_store.hpp"

namespace clab::io {

// Binary containers, little-endian regardless of host:
//   CLAB1  model checkpoint: version, config, merged flag, named tensors
//   CLABA  adapter state:    version, config, method header, named tensors
//   CLABF  fisher diagonal:  version, sample count, source tag, named tensors
// Tensor records are name (u32 length + UTF-8), rank (u32), dims (u32 each),
// raw f64 data.

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);
std::uint64_t file_hash(const std::filesystem::path& path);

std::string encode_checkpoint(const ModelConfig& cfg, const ParamStore& store);
std::pair<ModelConfig, ParamStore> decode_checkpoint(const std::string& bytes);
void write_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                      const ParamStore& store);
std::pair<ModelConfig, ParamStore> read_checkpoint(const std::filesystem::path& path);

std::string encode_adapter(const ModelConfig& cfg, const AdapterState& state);
std::pair<ModelConfig, AdapterState> decode_adapter(const std::string& bytes);
void write_adapter(const std::filesystem::path& path, const ModelConfig& cfg,
                   const AdapterState& state);
std::pair<ModelConfig, AdapterState> read_adapter(const std::filesystem::path& path);

std::string encode_fisher(const FisherDiagonal& fisher);
FisherDiagonal decode_fisher(const std::string& bytes);
void write_fisher(const std::filesystem::path& path, const FisherDiagonal& fisher);
FisherDiagonal read_fisher(const std::filesystem::path& path);

}  // namespace clab::io
