#include "qrel/io/files.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>

#include "qrel/error.hpp"
#include "qrel/rng.hpp"

namespace qrel::io {

std::string read_text_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view content)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(static_cast<bool>(out), "cannot open '" + tmp.string() + "' for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        require(static_cast<bool>(out), "failed writing '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

std::string format_double(double x)
{
    require(std::isfinite(x), "cannot serialize a non-finite number");
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& s)
{
    double x = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
    require(res.ec == std::errc() && res.ptr == s.data() + s.size(), "malformed number '" + s + "'");
    return x;
}

std::string hex64(std::uint64_t x)
{
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[x & 0xF];
        x >>= 4;
    }
    return out;
}

std::string file_digest(const std::filesystem::path& path)
{
    return hex64(fnv1a64(read_text_file(path)));
}

} // namespace qrel::io
