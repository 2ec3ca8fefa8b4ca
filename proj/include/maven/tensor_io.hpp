#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "maven/tensor.hpp"

namespace maven {

// "MVT1" layout: magic, u32 LE ndim, ndim × u32 LE dims, f32 LE payload.
// Values are rounded to float on write; readers reject NaN/Inf.

std::vector<std::uint8_t> encode_mvt1(const Tensor& t);
Tensor decode_mvt1(std::span<const std::uint8_t> bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
/// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v);
std::uint32_t get_u32le(std::span<const std::uint8_t> bytes, std::size_t offset);

/// sha256 as lowercase hex.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const std::string& text);

/// Checksum of the in-memory (64-bit) tensor: sha256 over u32 LE dims
/// followed by the f64 LE payload. Any bit change in any value changes it.
std::string tensor_checksum(const Tensor& t);

}  // namespace maven
