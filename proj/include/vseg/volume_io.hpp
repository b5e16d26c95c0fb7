#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"

#include "vseg/errors.hpp"
#include "vseg/volumes.hpp"

namespace vseg::io {

static_assert(std::endian::native == std::endian::little, "volume I/O assumes a little-endian host");

enum class Format { nifti1, blob };
enum class DType : std::int16_t { uint8 = 2, int16 = 4, float32 = 16 };

inline std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::uint8: return 1;
    case DType::int16: return 2;
    case DType::float32: return 4;
  }
  return 0;
}

inline const char* dtype_name(DType t) {
  switch (t) {
    case DType::uint8: return "uint8";
    case DType::int16: return "int16";
    case DType::float32: return "float32";
  }
  return "?";
}

inline DType dtype_from_name(const std::string& name) {
  if (name == "uint8") return DType::uint8;
  if (name == "int16") return DType::int16;
  if (name == "float32") return DType::float32;
  throw FormatError("unsupported dtype '" + name + "'");
}

/// Format implied by a path: `.nii` is NIfTI-1, `.json` is blob+manifest.
inline Format format_for(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".nii") return Format::nifti1;
  if (ext == ".json") return Format::blob;
  throw FormatError(path.string() + ": unknown volume extension '" + ext + "' (expected .nii or .json)");
}

inline const char* extension(Format f) { return f == Format::nifti1 ? ".nii" : ".json"; }

/// Decoded file contents before interpretation as image or label grid.
/// `data` holds channels x D x H x W values promoted to float.
struct RawVolume {
  Dims dims;
  std::size_t channels = 1;
  DType dtype = DType::float32;
  Spacing spacing{1.0, 1.0, 1.0};
  std::string subject_id;
  std::vector<float> data;
};

namespace detail {

inline std::vector<char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

inline void write_all(const std::filesystem::path& path, const void* data, std::size_t bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw IoError("short write to " + path.string());
}

template <class V>
V load(const std::vector<char>& buf, std::size_t offset) {
  V v;
  std::memcpy(&v, buf.data() + offset, sizeof(V));
  return v;
}

template <class V>
void store(std::vector<char>& buf, std::size_t offset, V v) {
  std::memcpy(buf.data() + offset, &v, sizeof(V));
}

inline std::vector<float> decode_payload(const char* bytes, std::size_t count, DType dtype) {
  std::vector<float> out(count);
  switch (dtype) {
    case DType::uint8:
      for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<std::uint8_t>(bytes[i]);
      break;
    case DType::int16:
      for (std::size_t i = 0; i < count; ++i) {
        std::int16_t v;
        std::memcpy(&v, bytes + 2 * i, 2);
        out[i] = v;
      }
      break;
    case DType::float32:
      std::memcpy(out.data(), bytes, count * 4);
      break;
  }
  return out;
}

inline std::vector<char> encode_payload(const std::vector<float>& values, DType dtype) {
  std::vector<char> out(values.size() * dtype_size(dtype));
  switch (dtype) {
    case DType::uint8:
      for (std::size_t i = 0; i < values.size(); ++i) out[i] = static_cast<char>(static_cast<std::uint8_t>(values[i]));
      break;
    case DType::int16:
      for (std::size_t i = 0; i < values.size(); ++i) {
        const auto v = static_cast<std::int16_t>(values[i]);
        std::memcpy(out.data() + 2 * i, &v, 2);
      }
      break;
    case DType::float32:
      std::memcpy(out.data(), values.data(), values.size() * 4);
      break;
  }
  return out;
}

inline void check_payload_size(const std::string& where, std::size_t offset, std::size_t expected,
                               std::size_t available) {
  if (available < expected) {
    throw FormatError(where + ": payload truncated at byte offset " + std::to_string(offset) + ": expected " +
                      std::to_string(expected) + " bytes, got " + std::to_string(available));
  }
}

}  // namespace detail

// NIfTI-1 single-file layout. Axis mapping: dim[1] = w (fastest),
// dim[2] = h, dim[3] = d, dim[4] = channel, so the file's linear order is
// the same C-order buffer used in memory.
inline constexpr std::size_t kNiftiHeaderSize = 348;
inline constexpr std::size_t kNiftiVoxOffset = 352;

inline RawVolume read_nifti(const std::filesystem::path& path) {
  const auto buf = detail::read_all(path);
  const std::string where = path.string();
  if (buf.size() < kNiftiHeaderSize) {
    throw FormatError(where + ": header truncated at byte offset " + std::to_string(buf.size()) + ": expected " +
                      std::to_string(kNiftiHeaderSize) + " bytes");
  }
  using detail::load;
  if (load<std::int32_t>(buf, 0) != 348) {
    throw FormatError(where + ": byte offset 0: sizeof_hdr is " + std::to_string(load<std::int32_t>(buf, 0)) +
                      ", expected 348 (big-endian files are not supported)");
  }
  if (std::memcmp(buf.data() + 344, "n+1", 4) != 0) {
    throw FormatError(where + ": byte offset 344: magic is not \"n+1\" (only single-file NIfTI-1 is supported)");
  }
  const auto ndim = load<std::int16_t>(buf, 40);
  if (ndim < 3 || ndim > 4) throw FormatError(where + ": byte offset 40: dim[0] = " + std::to_string(ndim) + ", expected 3 or 4");
  std::array<std::size_t, 4> extent{1, 1, 1, 1};
  for (int i = 0; i < ndim; ++i) {
    const auto v = load<std::int16_t>(buf, 42 + 2 * i);
    if (v < 1) throw FormatError(where + ": byte offset " + std::to_string(42 + 2 * i) + ": non-positive dim");
    extent[i] = static_cast<std::size_t>(v);
  }
  const auto code = load<std::int16_t>(buf, 70);
  if (code != 2 && code != 4 && code != 16) {
    throw FormatError(where + ": byte offset 70: unsupported datatype " + std::to_string(code));
  }
  RawVolume raw;
  raw.dtype = static_cast<DType>(code);
  raw.dims = {extent[2], extent[1], extent[0]};
  raw.channels = extent[3];
  for (int i = 0; i < 3; ++i) {
    const float px = load<float>(buf, 80 + 4 * i);
    raw.spacing[2 - i] = px > 0.0f ? px : 1.0;
  }
  const float vox = load<float>(buf, 108);
  const std::size_t offset = vox >= static_cast<float>(kNiftiHeaderSize) ? static_cast<std::size_t>(vox) : kNiftiVoxOffset;
  const std::size_t count = raw.channels * raw.dims.size();
  const std::size_t bytes = count * dtype_size(raw.dtype);
  detail::check_payload_size(where, offset, bytes, buf.size() > offset ? buf.size() - offset : 0);
  raw.data = detail::decode_payload(buf.data() + offset, count, raw.dtype);
  char descrip[81] = {};
  std::memcpy(descrip, buf.data() + 148, 80);
  raw.subject_id = descrip;
  if (raw.subject_id.empty()) raw.subject_id = path.stem().string();
  return raw;
}

inline void write_nifti(const RawVolume& raw, const std::filesystem::path& path) {
  std::vector<char> buf(kNiftiVoxOffset, 0);
  using detail::store;
  store<std::int32_t>(buf, 0, 348);
  const bool four_d = raw.channels > 1;
  store<std::int16_t>(buf, 40, four_d ? 4 : 3);
  store<std::int16_t>(buf, 42, static_cast<std::int16_t>(raw.dims.w));
  store<std::int16_t>(buf, 44, static_cast<std::int16_t>(raw.dims.h));
  store<std::int16_t>(buf, 46, static_cast<std::int16_t>(raw.dims.d));
  store<std::int16_t>(buf, 48, static_cast<std::int16_t>(raw.channels));
  for (int i = 5; i < 8; ++i) store<std::int16_t>(buf, 42 + 2 * (i - 1), 1);
  store<std::int16_t>(buf, 70, static_cast<std::int16_t>(raw.dtype));
  store<std::int16_t>(buf, 72, static_cast<std::int16_t>(8 * dtype_size(raw.dtype)));
  store<float>(buf, 76, 1.0f);
  store<float>(buf, 80, static_cast<float>(raw.spacing[2]));
  store<float>(buf, 84, static_cast<float>(raw.spacing[1]));
  store<float>(buf, 88, static_cast<float>(raw.spacing[0]));
  for (int i = 4; i < 8; ++i) store<float>(buf, 76 + 4 * i, 1.0f);
  store<float>(buf, 108, static_cast<float>(kNiftiVoxOffset));
  store<float>(buf, 112, 1.0f);  // scl_slope
  buf[123] = 2;                   // xyzt_units: mm
  std::memcpy(buf.data() + 148, raw.subject_id.data(), std::min<std::size_t>(raw.subject_id.size(), 79));
  std::memcpy(buf.data() + 344, "n+1", 4);
  const auto payload = detail::encode_payload(raw.data, raw.dtype);
  buf.insert(buf.end(), payload.begin(), payload.end());
  detail::write_all(path, buf.data(), buf.size());
}

inline constexpr const char* kBlobFormatTag = "vseg-blob/1";

/// Blob+manifest: `<name>.json` describes `<name>.raw`, a little-endian
/// C-order buffer (channel, then d, h, w).
inline RawVolume read_blob(const std::filesystem::path& manifest_path) {
  const auto text = detail::read_all(manifest_path);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(manifest_path.string() + ": byte offset " + std::to_string(e.byte) + ": " + e.what());
  }
  RawVolume raw;
  try {
    if (m.at("format").get<std::string>() != kBlobFormatTag) throw FormatError(manifest_path.string() + ": unknown format tag");
    const auto dims = m.at("dims").get<std::vector<std::size_t>>();
    if (dims.size() != 3) throw FormatError(manifest_path.string() + ": dims must have 3 entries");
    raw.dims = {dims[0], dims[1], dims[2]};
    raw.channels = m.value("channels", std::size_t{1});
    raw.dtype = dtype_from_name(m.at("dtype").get<std::string>());
    if (m.contains("spacing")) {
      const auto s = m.at("spacing").get<std::vector<double>>();
      if (s.size() != 3) throw FormatError(manifest_path.string() + ": spacing must have 3 entries");
      raw.spacing = {s[0], s[1], s[2]};
    }
    raw.subject_id = m.value("subject_id", manifest_path.stem().string());
    const auto blob = manifest_path.parent_path() / m.at("blob").get<std::string>();
    const auto bytes = detail::read_all(blob);
    const std::size_t count = raw.channels * raw.dims.size();
    detail::check_payload_size(blob.string(), 0, count * dtype_size(raw.dtype), bytes.size());
    raw.data = detail::decode_payload(bytes.data(), count, raw.dtype);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  return raw;
}

inline void write_blob(const RawVolume& raw, const std::filesystem::path& manifest_path,
                       const std::vector<std::string>& channel_names = {}) {
  auto blob_path = manifest_path;
  blob_path.replace_extension(".raw");
  nlohmann::ordered_json m;
  m["format"] = kBlobFormatTag;
  m["subject_id"] = raw.subject_id;
  m["dims"] = {raw.dims.d, raw.dims.h, raw.dims.w};
  m["channels"] = raw.channels;
  m["dtype"] = dtype_name(raw.dtype);
  m["spacing"] = {raw.spacing[0], raw.spacing[1], raw.spacing[2]};
  if (!channel_names.empty()) m["modalities"] = channel_names;
  m["blob"] = blob_path.filename().string();
  const auto payload = detail::encode_payload(raw.data, raw.dtype);
  detail::write_all(blob_path, payload.data(), payload.size());
  const auto text = m.dump(2) + "\n";
  detail::write_all(manifest_path, text.data(), text.size());
}

inline RawVolume read_raw(const std::filesystem::path& path) {
  return format_for(path) == Format::nifti1 ? read_nifti(path) : read_blob(path);
}

inline void write_raw(const RawVolume& raw, const std::filesystem::path& path,
                      const std::vector<std::string>& channel_names = {}) {
  if (format_for(path) == Format::nifti1) {
    write_nifti(raw, path);
  } else {
    write_blob(raw, path, channel_names);
  }
}

inline MultiModalVolume read_image(const std::filesystem::path& path) {
  auto raw = read_raw(path);
  if (raw.channels != kModalities) {
    throw DimensionMismatch(path.string() + ": expected " + std::to_string(kModalities) + " modalities, found " +
                            std::to_string(raw.channels));
  }
  MultiModalVolume vol;
  vol.dims = raw.dims;
  vol.spacing = raw.spacing;
  vol.subject_id = raw.subject_id;
  const std::size_t n = raw.dims.size();
  for (std::size_t m = 0; m < kModalities; ++m) vol.data[m].assign(raw.data.begin() + m * n, raw.data.begin() + (m + 1) * n);
  vol.validate();
  return vol;
}

inline void write_image(const MultiModalVolume& vol, const std::filesystem::path& path) {
  vol.validate();
  RawVolume raw{vol.dims, kModalities, DType::float32, vol.spacing, vol.subject_id, {}};
  raw.data.reserve(kModalities * vol.dims.size());
  for (const auto& m : vol.data) raw.data.insert(raw.data.end(), m.begin(), m.end());
  write_raw(raw, path, {kModalityNames.begin(), kModalityNames.end()});
}

inline LabelVolume read_labels(const std::filesystem::path& path) {
  const auto raw = read_raw(path);
  if (raw.channels != 1) throw DimensionMismatch(path.string() + ": label volume must have a single channel");
  LabelVolume lab;
  lab.dims = raw.dims;
  lab.spacing = raw.spacing;
  lab.subject_id = raw.subject_id;
  lab.labels.resize(raw.data.size());
  for (std::size_t i = 0; i < raw.data.size(); ++i) {
    const float v = raw.data[i];
    if (v != 0.0f && v != 1.0f && v != 2.0f && v != 4.0f) {
      throw FormatError(path.string() + ": voxel " + std::to_string(i) + " has label " + std::to_string(v) +
                        ", expected one of {0,1,2,4}");
    }
    lab.labels[i] = static_cast<std::uint8_t>(v);
  }
  return lab;
}

/// Label volumes are always stored as unsigned 8-bit.
inline void write_labels(const LabelVolume& lab, const std::filesystem::path& path) {
  lab.validate();
  RawVolume raw{lab.dims, 1, DType::uint8, lab.spacing, lab.subject_id, {}};
  raw.data.assign(lab.labels.begin(), lab.labels.end());
  write_raw(raw, path, {"label"});
}

inline ScalarVolume read_scalar(const std::filesystem::path& path) {
  auto raw = read_raw(path);
  if (raw.channels != 1) throw DimensionMismatch(path.string() + ": scalar volume must have a single channel");
  return {raw.dims, std::move(raw.data), raw.spacing, raw.subject_id};
}

inline void write_scalar(const ScalarVolume& vol, const std::filesystem::path& path) {
  if (vol.values.size() != vol.dims.size()) throw DimensionMismatch("scalar volume size does not match dims");
  RawVolume raw{vol.dims, 1, DType::float32, vol.spacing, vol.subject_id, vol.values};
  write_raw(raw, path);
}

}  // namespace vseg::io
