#include "m3s/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "m3s/error.hpp"

namespace m3s {

double pixel_to_unit(std::uint8_t v) { return static_cast<double>(v) / 127.5 - 1.0; }

std::uint8_t unit_to_pixel(double v) {
    const double p = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
    return static_cast<std::uint8_t>(std::clamp(p, 0.0, 255.0));
}

namespace {

Tensor from_gray_buffer(const png_image& img, const std::vector<std::uint8_t>& buf) {
    const Shape s{1, static_cast<int>(img.height), static_cast<int>(img.width)};
    Tensor out(s);
    for (std::size_t i = 0; i < buf.size(); ++i) out[i] = pixel_to_unit(buf[i]);
    return out;
}

}  // namespace

Tensor read_png_gray(const std::filesystem::path& path) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
        throw std::runtime_error("cannot read PNG " + path.string() + ": " + img.message);
    }
    img.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw std::runtime_error("cannot decode PNG " + path.string() + ": " + img.message);
    }
    return from_gray_buffer(img, buf);
}

Tensor decode_png_gray(const std::vector<std::uint8_t>& bytes) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
        throw std::runtime_error(std::string("cannot read PNG: ") + img.message);
    }
    img.format = PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw std::runtime_error(std::string("cannot decode PNG: ") + img.message);
    }
    return from_gray_buffer(img, buf);
}

std::vector<std::uint8_t> encode_png(const Tensor& image) {
    const Shape& s = image.shape();
    if (s.channels != 1 && s.channels != 3) {
        throw ValidationError("image", "PNG export needs 1 or 3 channels, got " + s.str());
    }
    std::vector<std::uint8_t> pixels(s.numel());
    for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x)
            for (int c = 0; c < s.channels; ++c)
                pixels[(static_cast<std::size_t>(y) * s.width + x) * s.channels + c] = unit_to_pixel(image.at(c, y, x));

    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(s.width);
    img.height = static_cast<png_uint_32>(s.height);
    img.format = s.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
        throw std::runtime_error(std::string("PNG encode failed: ") + img.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
        throw std::runtime_error(std::string("PNG encode failed: ") + img.message);
    }
    out.resize(size);
    return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!os) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
    write_file_atomic(path, encode_png(image));
}

Tensor resize_image(const Tensor& image, int height, int width) {
    const Shape& s = image.shape();
    if (height < 1 || width < 1) throw ValidationError("resize", "target size must be positive");
    if (s.height == height && s.width == width) return image;
    Tensor out({s.channels, height, width});
    const double sy = static_cast<double>(s.height) / height;
    const double sx = static_cast<double>(s.width) / width;
    // Box filter: each output pixel averages the source area it covers.
    for (int c = 0; c < s.channels; ++c) {
        for (int y = 0; y < height; ++y) {
            const double y0 = y * sy;
            const double y1 = y0 + sy;
            for (int x = 0; x < width; ++x) {
                const double x0 = x * sx;
                const double x1 = x0 + sx;
                double acc = 0.0;
                double area = 0.0;
                for (int yy = static_cast<int>(std::floor(y0)); yy < static_cast<int>(std::ceil(y1)); ++yy) {
                    const double wy = std::min(y1, yy + 1.0) - std::max(y0, static_cast<double>(yy));
                    const int cy = std::clamp(yy, 0, s.height - 1);
                    for (int xx = static_cast<int>(std::floor(x0)); xx < static_cast<int>(std::ceil(x1)); ++xx) {
                        const double wx = std::min(x1, xx + 1.0) - std::max(x0, static_cast<double>(xx));
                        const int cx = std::clamp(xx, 0, s.width - 1);
                        acc += wy * wx * image.at(c, cy, cx);
                        area += wy * wx;
                    }
                }
                out.at(c, y, x) = acc / area;
            }
        }
    }
    return out;
}

Tensor contact_sheet(const std::vector<Tensor>& panels, int gap) {
    if (panels.empty()) throw ValidationError("contact_sheet", "no panels");
    const Shape first = panels.front().shape();
    int width = 0;
    int height = 0;
    for (const Tensor& p : panels) {
        if (p.shape().channels != first.channels) throw ValidationError("contact_sheet", "panels differ in channels");
        width += p.shape().width;
        height = std::max(height, p.shape().height);
    }
    width += gap * static_cast<int>(panels.size() - 1);
    Tensor sheet({first.channels, height, width}, 1.0);
    int x0 = 0;
    for (const Tensor& p : panels) {
        for (int c = 0; c < first.channels; ++c)
            for (int y = 0; y < p.shape().height; ++y)
                for (int x = 0; x < p.shape().width; ++x) sheet.at(c, y, x0 + x) = p.at(c, y, x);
        x0 += p.shape().width + gap;
    }
    return sheet;
}

}  // namespace m3s
