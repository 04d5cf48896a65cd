#include "qrel/cli/manifest.hpp"

#include <cstdlib>

#include "qrel/error.hpp"
#include "qrel/io/files.hpp"
#include "qrel/rng.hpp"
#include "qrel/version.hpp"

namespace qrel::cli {

namespace {

io::Json spec_json(const quant::QuantSpec& s)
{
    io::Json j;
    j["bits"] = s.bits;
    j["group_size"] = s.group_size;
    j["method"] = quant::to_string(s.method);
    j["lp_norm"] = s.lp_norm;
    j["hqq_iters"] = s.hqq_iters;
    j["hqq_beta"] = s.hqq_beta;
    j["hqq_kappa"] = s.hqq_kappa;
    return j;
}

quant::QuantSpec spec_from(const io::Json& j)
{
    quant::QuantSpec s;
    s.bits = j.at("bits").get<int>();
    s.group_size = j.at("group_size").get<int>();
    s.method = quant::method_from_string(j.at("method").get<std::string>());
    s.lp_norm = j.at("lp_norm").get<double>();
    s.hqq_iters = j.at("hqq_iters").get<int>();
    s.hqq_beta = j.at("hqq_beta").get<double>();
    s.hqq_kappa = j.at("hqq_kappa").get<double>();
    return s;
}

} // namespace

io::Json RunManifest::to_json() const
{
    io::Json j;
    j["model"] = model_path;
    j["model_digest"] = model_digest;
    j["label"] = label;
    j["spec"] = spec_json(spec);
    j["calib"] = calib_path;
    j["calib_digest"] = calib_digest;
    j["seed"] = seed;
    j["output_dir"] = output_dir;
    j["tool_version"] = tool_version.empty() ? std::string(kToolVersion) : tool_version;
    return j;
}

RunManifest RunManifest::from_json(const io::Json& j)
{
    try {
        RunManifest m;
        m.model_path = j.at("model").get<std::string>();
        m.model_digest = j.at("model_digest").get<std::string>();
        m.label = j.at("label").get<std::string>();
        m.spec = spec_from(j.at("spec"));
        m.calib_path = j.value("calib", std::string());
        m.calib_digest = j.value("calib_digest", std::string());
        m.seed = j.at("seed").get<std::uint64_t>();
        m.output_dir = j.value("output_dir", std::string());
        m.tool_version = j.value("tool_version", std::string());
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed run manifest: ") + e.what());
    }
}

std::string RunManifest::hash() const
{
    io::Json j = to_json();
    j.erase("model");
    j.erase("calib");
    j.erase("output_dir");
    return io::hex64(fnv1a64(j.dump()));
}

std::filesystem::path manifest_path(const std::filesystem::path& artifact)
{
    auto p = artifact;
    p += ".manifest.json";
    return p;
}

void write_manifest(const std::filesystem::path& artifact, const RunManifest& m)
{
    io::Json j = m.to_json();
    j["hash"] = m.hash();
    io::write_text_file(manifest_path(artifact), io::dump(j));
}

std::optional<RunManifest> read_manifest(const std::filesystem::path& artifact)
{
    const auto p = manifest_path(artifact);
    if (!std::filesystem::exists(p)) return std::nullopt;
    try {
        return RunManifest::from_json(io::Json::parse(io::read_text_file(p)));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(p.string() + ": " + e.what());
    }
}

std::filesystem::path output_path(const std::filesystem::path& p)
{
    if (p.is_absolute()) return p;
    if (const char* root = std::getenv("QREL_OUTPUT_ROOT"); root && *root) return std::filesystem::path(root) / p;
    return p;
}

} // namespace qrel::cli
