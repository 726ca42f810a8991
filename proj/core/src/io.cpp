#include "densefix/io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace densefix {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
    return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for reading: " + path.string());
    return is;
}

}  // namespace

void write_npy(std::ostream& os, const Tensor& t) {
    std::ostringstream shape;
    shape << "(";
    for (int i = 0; i < t.ndim(); ++i) shape << t.extent(i) << (t.ndim() == 1 ? "," : (i + 1 < t.ndim() ? ", " : ""));
    shape << ")";
    std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': " + shape.str() + ", }";
    // Pad with spaces so that magic+len+header is a multiple of 64, newline-terminated.
    const std::size_t base = 10 + header.size() + 1;
    header.append((64 - base % 64) % 64, ' ');
    header.push_back('\n');

    os.write("\x93NUMPY\x01\x00", 8);
    const std::uint16_t len = static_cast<std::uint16_t>(header.size());
    os.write(reinterpret_cast<const char*>(&len), 2);
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    const auto vals = t.values();
    os.write(reinterpret_cast<const char*>(vals.data()),
             static_cast<std::streamsize>(vals.size() * sizeof(double)));
}

Tensor read_npy(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "\x93NUMPY", 6) != 0) throw std::runtime_error("read_npy: bad magic");
    std::uint16_t len = 0;
    is.read(reinterpret_cast<char*>(&len), 2);
    std::string header(len, '\0');
    is.read(header.data(), len);
    if (!is) throw std::runtime_error("read_npy: truncated header");
    if (header.find("'<f8'") == std::string::npos || header.find("False") == std::string::npos)
        throw std::runtime_error("read_npy: only C-order float64 arrays are supported");

    const auto lp = header.find('(');
    const auto rp = header.find(')', lp);
    if (lp == std::string::npos || rp == std::string::npos) throw std::runtime_error("read_npy: bad shape");
    std::vector<int> dims;
    std::string token;
    for (std::size_t i = lp + 1; i <= rp; ++i) {
        const char c = header[i];
        if (std::isdigit(static_cast<unsigned char>(c))) {
            token.push_back(c);
        } else if (!token.empty()) {
            dims.push_back(std::stoi(token));
            token.clear();
        }
    }
    std::vector<double> data(static_cast<std::size_t>(shape_size(dims)));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw std::runtime_error("read_npy: truncated data");
    return Tensor::from(std::move(dims), std::move(data));
}

void write_npy_file(const std::filesystem::path& path, const Tensor& t) {
    auto os = open_out(path);
    write_npy(os, t);
}

Tensor read_npy_file(const std::filesystem::path& path) {
    auto is = open_in(path);
    return read_npy(is);
}

void write_pgm_file(const std::filesystem::path& path, const LabelMap& lm) {
    auto os = open_out(path);
    write_pgm(os, lm);
}

LabelMap read_pgm_file(const std::filesystem::path& path) {
    auto is = open_in(path);
    return read_pgm(is);
}

void write_ppm_file(const std::filesystem::path& path, const Tensor& image) {
    if (image.ndim() != 3 || image.extent(0) != 3)
        throw std::invalid_argument("write_ppm_file: expected [3,H,W]");
    const int h = image.extent(1), w = image.extent(2);
    auto os = open_out(path);
    os << "P6\n" << w << " " << h << "\n255\n";
    const auto vals = image.values();
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = vals[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * w + x];
                row[static_cast<std::size_t>(x) * 3 + static_cast<std::size_t>(c)] =
                    static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
            }
        }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
}

}  // namespace densefix
