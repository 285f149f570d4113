#include "dangerdet/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

#include <opencv2/imgcodecs.hpp>

#include "dangerdet/error.hpp"

namespace dangerdet {

namespace fs = std::filesystem;

std::string read_text_file(const fs::path& path, std::string_view module) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(std::string(module), "IoError", "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view bytes, std::string_view module) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(std::string(module), "IoError", "cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error(std::string(module), "IoError", "short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw Error(std::string(module), "IoError", "cannot rename onto " + path.string());
    }
}

void write_png_atomic(const fs::path& path, const cv::Mat& image, std::string_view module) {
    std::vector<uchar> buffer;
    if (!cv::imencode(".png", image, buffer))
        throw Error(std::string(module), "IoError", "PNG encoding failed for " + path.string());
    write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(buffer.data()), buffer.size()),
                      module);
}

std::string format_double(double value) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, end);
}

}  // namespace dangerdet
