#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "qrel/io/formats.hpp"
#include "qrel/quant/quant_spec.hpp"

namespace qrel::cli {

/// What produced a set of artifacts. Paths are recorded for humans; the hash
/// covers file digests instead, so moving inputs or writing to a different
/// output directory does not change it.
struct RunManifest {
    std::string model_path;
    std::string model_digest;
    std::string label = "bf16";
    quant::QuantSpec spec;
    std::string calib_path;
    std::string calib_digest;
    std::uint64_t seed = 0;
    std::string output_dir;
    std::string tool_version;

    io::Json to_json() const;
    static RunManifest from_json(const io::Json& j);
    std::string hash() const;
};

/// `<artifact>.manifest.json`
std::filesystem::path manifest_path(const std::filesystem::path& artifact);

void write_manifest(const std::filesystem::path& artifact, const RunManifest& m);
std::optional<RunManifest> read_manifest(const std::filesystem::path& artifact);

/// Resolves relative output paths against $QREL_OUTPUT_ROOT when it is set.
std::filesystem::path output_path(const std::filesystem::path& p);

} // namespace qrel::cli
