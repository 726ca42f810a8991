#include "densefix/label_map.hpp"

#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace densefix {

int valid_count(const LabelMap& lm) {
    int n = 0;
    for (std::uint8_t v : lm.values)
        if (v != kIgnoreLabel) ++n;
    return n;
}

ProbMap probmap_from_tensor(const Tensor& probs, int n) {
    if (probs.ndim() != 4) throw std::invalid_argument("probmap_from_tensor: expected [N,K,H,W]");
    const int num = probs.extent(0), k = probs.extent(1), h = probs.extent(2), w = probs.extent(3);
    if (n < 0 || n >= num) throw std::out_of_range("probmap_from_tensor: sample index out of range");
    ProbMap pm(k, h, w);
    const auto vals = probs.values();
    const std::size_t per_sample = static_cast<std::size_t>(k) * h * w;
    const double* src = vals.data() + static_cast<std::size_t>(n) * per_sample;
    std::copy(src, src + per_sample, pm.values.begin());
    return pm;
}

void write_pgm(std::ostream& os, const LabelMap& lm) {
    os << "P5\n" << lm.width << " " << lm.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(lm.values.data()),
             static_cast<std::streamsize>(lm.values.size()));
}

LabelMap read_pgm(std::istream& is) {
    std::string magic;
    is >> magic;
    if (magic != "P5") throw std::runtime_error("read_pgm: not a P5 PGM stream");
    int w = 0, h = 0, maxval = 0;
    is >> w >> h >> maxval;
    if (!is || w <= 0 || h <= 0 || maxval != 255) throw std::runtime_error("read_pgm: bad header");
    is.get();  // single whitespace after header
    LabelMap lm(h, w, 0);
    is.read(reinterpret_cast<char*>(lm.values.data()), static_cast<std::streamsize>(lm.values.size()));
    if (!is) throw std::runtime_error("read_pgm: truncated pixel data");
    return lm;
}

}  // namespace densefix
