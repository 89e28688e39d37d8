#include "omlab/model_io.hpp"

#include <cstring>
#include <sstream>

#include "binary_io.hpp"
#include "omlab/error.hpp"
#include "omlab/hash.hpp"

namespace omlab {

namespace {

constexpr char kMagic[] = "OMMODEL1";
constexpr std::size_t kMagicLen = 8;
constexpr int kModelVersion = 1;
constexpr const char* kBasisSection = "basis.rows";

void append_section(std::string& blob, nlohmann::json& table, const std::string& name, const Array& a) {
  table.push_back({{"name", name}, {"shape", a.shape}, {"offset", blob.size()}, {"count", a.size()}});
  for (double v : a.data) binio::put<double>(blob, v);
}

Array read_section(const std::string& blob, const nlohmann::json& entry) {
  const auto shape = entry.at("shape").get<Shape>();
  const auto offset = entry.at("offset").get<std::size_t>();
  const auto count = entry.at("count").get<std::size_t>();
  if (count != numel(shape)) throw FormatError(FormatError::Code::kParse, "model: section count/shape mismatch");
  if (offset > blob.size() || count > (blob.size() - offset) / sizeof(double)) {
    throw FormatError(FormatError::Code::kTruncated, "model: section '" + entry.at("name").get<std::string>() +
                                                         "' runs past the end of the file");
  }
  Array a(shape);
  for (std::size_t i = 0; i < count; ++i) a[i] = binio::get<double>(blob, offset + i * sizeof(double));
  return a;
}

}  // namespace

std::string serialize_model(const Detector& model) {
  std::string blob;
  nlohmann::json sections = nlohmann::json::array();
  for (const auto& p : model.parameters()) append_section(blob, sections, p.name, p.node.value());
  nlohmann::json basis = nullptr;
  if (model.basis()) {
    basis = model.basis()->to_json();
    append_section(blob, sections, kBasisSection, model.basis()->rows());
  }
  const nlohmann::json header = {{"format_version", kModelVersion},
                                 {"config", model.config().to_json()},
                                 {"seed", model.config().seed},
                                 {"basis", basis},
                                 {"sections", sections},
                                 {"blob_bytes", blob.size()},
                                 {"blob_sha256", sha256_hex(blob)}};
  const std::string header_text = header.dump();
  std::string out(kMagic, kMagicLen);
  binio::put<std::uint64_t>(out, header_text.size());
  out += header_text;
  out += blob;
  return out;
}

Detector deserialize_model(const std::string& bytes) {
  if (bytes.size() < kMagicLen || std::memcmp(bytes.data(), kMagic, kMagicLen) != 0) {
    throw FormatError(FormatError::Code::kBadMagic, "model: bad magic");
  }
  if (bytes.size() < kMagicLen + 8) throw FormatError(FormatError::Code::kTruncated, "model: truncated header");
  const auto header_len = binio::get<std::uint64_t>(bytes, kMagicLen);
  if (header_len > bytes.size() - kMagicLen - 8) throw FormatError(FormatError::Code::kTruncated, "model: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(kMagicLen + 8, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Code::kParse, std::string("model: header: ") + e.what());
  }
  try {
    if (header.at("format_version").get<int>() != kModelVersion) {
      throw FormatError(FormatError::Code::kVersionMismatch, "model: unsupported format_version");
    }
    const std::string blob = bytes.substr(kMagicLen + 8 + header_len);
    if (blob.size() < header.at("blob_bytes").get<std::size_t>()) {
      throw FormatError(FormatError::Code::kTruncated, "model: parameter blob is truncated");
    }
    if (blob.size() != header.at("blob_bytes").get<std::size_t>() ||
        sha256_hex(blob) != header.at("blob_sha256").get<std::string>()) {
      throw FormatError(FormatError::Code::kChecksum, "model: parameter blob checksum mismatch");
    }
    DetectorConfig config;
    try {
      config = DetectorConfig::from_json(header.at("config"));
    } catch (const ContractError& e) {
      throw FormatError(FormatError::Code::kParse, std::string("model: config: ") + e.what());
    }
    std::vector<std::pair<std::string, Array>> values;
    std::optional<Array> basis_rows;
    for (const auto& entry : header.at("sections")) {
      const auto name = entry.at("name").get<std::string>();
      if (name == kBasisSection) {
        basis_rows = read_section(blob, entry);
      } else {
        values.emplace_back(name, read_section(blob, entry));
      }
    }
    std::optional<OrthoBasis> basis;
    if (!header.at("basis").is_null()) {
      const OrthoBasis from_header = OrthoBasis::from_json(header.at("basis"));
      if (!basis_rows || *basis_rows != from_header.rows()) {
        throw FormatError(FormatError::Code::kParse, "model: basis section disagrees with header");
      }
      basis = from_header;
    }
    Detector model(config);
    model.restore(values, std::move(basis));
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatError::Code::kParse, std::string("model: header: ") + e.what());
  }
}

void save_model(const Detector& model, const std::string& path) { binio::write_file(path, serialize_model(model)); }

Detector load_model(const std::string& path) { return deserialize_model(binio::read_file(path)); }

void write_training_log(std::span<const EpochLog> log, const std::string& path) {
  std::string text;
  for (const auto& e : log) text += e.to_json().dump() + "\n";
  binio::write_file(path, text);
}

}  // namespace omlab
