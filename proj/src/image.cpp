#include "rcnet/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>

#include "rcnet/error.hpp"

namespace rcnet {

namespace {

struct RawImage {
    std::size_t height = 0, width = 0, channels = 0;
    unsigned max_value = 255;
    std::vector<std::uint16_t> samples;
};

struct FileCloser {
    void operator()(std::FILE *f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngErrorState {
    std::jmp_buf jump;
    char message[256] = "libpng error";
};

void png_error_cb(png_structp png, png_const_charp msg)
{
    auto *state = static_cast<PngErrorState *>(png_get_error_ptr(png));
    std::snprintf(state->message, sizeof state->message, "%s", msg);
    std::longjmp(state->jump, 1);
}

void png_warning_cb(png_structp, png_const_charp) {}

// Decodes into 1 or 3 channels at native depth. All libpng state lives in
// this frame so longjmp never skips a C++ destructor.
bool decode_png(std::FILE *fp, RawImage &out, std::string &error)
{
    PngErrorState state;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &state, png_error_cb, png_warning_cb);
    if (!png) {
        error = "cannot allocate PNG decoder";
        return false;
    }
    png_infop info = png_create_info_struct(png);
    std::uint8_t *buffer = nullptr;
    png_bytep *rows = nullptr;
    if (!info || setjmp(state.jump)) {
        error = state.message;
        std::free(buffer);
        std::free(rows);
        png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        return false;
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE)
        png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS))
        png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const std::size_t h = png_get_image_height(png, info);
    const std::size_t w = png_get_image_width(png, info);
    const std::size_t ch = png_get_channels(png, info);
    const int out_depth = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    if (ch != 1 && ch != 3) {
        std::snprintf(state.message, sizeof state.message, "unsupported PNG channel layout");
        png_error(png, state.message);
    }
    buffer = static_cast<std::uint8_t *>(std::malloc(rowbytes * h));
    rows = static_cast<png_bytep *>(std::malloc(sizeof(png_bytep) * h));
    if (!buffer || !rows)
        png_error(png, "out of memory");
    for (std::size_t y = 0; y < h; ++y)
        rows[y] = buffer + y * rowbytes;
    png_read_image(png, rows);
    png_read_end(png, nullptr);

    out.height = h;
    out.width = w;
    out.channels = ch;
    out.max_value = out_depth == 16 ? 65535u : 255u;
    out.samples.resize(h * w * ch);
    for (std::size_t y = 0; y < h; ++y) {
        const std::uint8_t *row = rows[y];
        for (std::size_t i = 0; i < w * ch; ++i)
            out.samples[y * w * ch + i] =
                out_depth == 16 ? std::uint16_t((row[2 * i] << 8) | row[2 * i + 1]) : row[i];
    }
    std::free(buffer);
    std::free(rows);
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
}

bool encode_png(std::FILE *fp, const std::vector<std::uint8_t> &rgb, std::size_t h, std::size_t w, std::size_t ch,
                std::string &error)
{
    PngErrorState state;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &state, png_error_cb, png_warning_cb);
    if (!png) {
        error = "cannot allocate PNG encoder";
        return false;
    }
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(state.jump)) {
        error = state.message;
        png_destroy_write_struct(&png, info ? &info : nullptr);
        return false;
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, png_uint_32(w), png_uint_32(h), 8, ch == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < h; ++y)
        png_write_row(png, const_cast<png_bytep>(rgb.data() + y * w * ch));
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
    return true;
}

// Reads one PNM header token, skipping whitespace and '#' comments.
std::string pnm_token(std::istream &is)
{
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
        if (c == '#') {
            while ((c = is.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty())
                return tok;
            continue;
        }
        tok.push_back(char(c));
    }
    return tok;
}

std::size_t parse_header_number(const std::string &tok, const std::filesystem::path &path)
{
    if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit((unsigned char)c); }))
        throw DataError(path.string() + ": malformed PPM header");
    return std::stoul(tok);
}

RawImage decode_ppm(const std::filesystem::path &path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw DataError("cannot open image " + path.string());
    if (pnm_token(is) != "P6")
        throw DataError(path.string() + ": malformed PPM header (expected P6)");
    RawImage img;
    img.width = parse_header_number(pnm_token(is), path);
    img.height = parse_header_number(pnm_token(is), path);
    img.max_value = unsigned(parse_header_number(pnm_token(is), path));
    img.channels = 3;
    if (img.width == 0 || img.height == 0)
        throw DataError(path.string() + ": empty PPM");
    if (img.max_value == 0 || img.max_value > 65535)
        throw DataError(path.string() + ": unsupported PPM maxval " + std::to_string(img.max_value));
    const std::size_t n = img.width * img.height * 3;
    const std::size_t bytes_per = img.max_value > 255 ? 2 : 1;
    std::vector<std::uint8_t> raw(n * bytes_per);
    if (!is.read(reinterpret_cast<char *>(raw.data()), std::streamsize(raw.size())))
        throw DataError(path.string() + ": truncated PPM data");
    img.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        img.samples[i] = bytes_per == 2 ? std::uint16_t((raw[2 * i] << 8) | raw[2 * i + 1]) : raw[i];
    return img;
}

bool has_extension(const std::filesystem::path &path, const char *ext)
{
    std::string e = path.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return char(std::tolower(c)); });
    return e == ext;
}

bool is_png_file(const std::filesystem::path &path)
{
    std::ifstream is(path, std::ios::binary);
    unsigned char sig[8] = {};
    is.read(reinterpret_cast<char *>(sig), 8);
    return is && png_sig_cmp(sig, 0, 8) == 0;
}

RawImage decode_any(const std::filesystem::path &path)
{
    if (!std::filesystem::exists(path))
        throw DataError("image not found: " + path.string());
    if (!is_png_file(path))
        return decode_ppm(path);
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp)
        throw DataError("cannot open image " + path.string());
    RawImage raw;
    std::string error;
    if (!decode_png(fp.get(), raw, error))
        throw DataError(path.string() + ": malformed PNG: " + error);
    return raw;
}

} // namespace

ImageRGB load_image(const std::filesystem::path &path)
{
    RawImage raw = decode_any(path);
    ImageRGB img(raw.height, raw.width);
    const float max_value = float(raw.max_value);
    for (std::size_t p = 0; p < raw.height * raw.width; ++p)
        for (std::size_t c = 0; c < 3; ++c) {
            const std::uint16_t v = raw.samples[p * raw.channels + (raw.channels == 3 ? c : 0)];
            img.data[p * 3 + c] = std::min(1.0f, float(v) / max_value);
        }
    return img;
}

std::vector<std::uint8_t> load_mask(const std::filesystem::path &path, std::size_t &height, std::size_t &width)
{
    RawImage raw = decode_any(path);
    height = raw.height;
    width = raw.width;
    std::vector<std::uint8_t> mask(raw.height * raw.width);
    for (std::size_t p = 0; p < mask.size(); ++p)
        mask[p] = raw.samples[p * raw.channels] != 0 ? 1 : 0;
    return mask;
}

std::uint8_t quantize8(float v)
{
    const float c = std::clamp(std::isfinite(v) ? v : 0.0f, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::round(c * 255.0f));
}

void save_image(const ImageRGB &img, const std::filesystem::path &path)
{
    if (img.data.size() != img.pixels() * 3)
        throw DimensionError("save_image: buffer does not match " + std::to_string(img.height) + "x" +
                             std::to_string(img.width));
    for (float v : img.data)
        if (!std::isfinite(v))
            throw NumericDomainError("save_image: non-finite sample");
    std::vector<std::uint8_t> bytes(img.data.size());
    std::transform(img.data.begin(), img.data.end(), bytes.begin(), quantize8);

    if (has_extension(path, ".ppm")) {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os)
            throw DataError("cannot write " + path.string());
        os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
        os.write(reinterpret_cast<const char *>(bytes.data()), std::streamsize(bytes.size()));
        if (!os)
            throw DataError("write failed: " + path.string());
        return;
    }
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp)
        throw DataError("cannot write " + path.string());
    std::string error;
    if (!encode_png(fp.get(), bytes, img.height, img.width, 3, error))
        throw DataError(path.string() + ": PNG encode failed: " + error);
}

ImageRGB clamped(const ImageRGB &img)
{
    ImageRGB out = img;
    for (auto &v : out.data)
        v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

float mean_intensity(const ImageRGB &img)
{
    double acc = 0.0;
    for (float v : img.data)
        acc += v;
    return img.data.empty() ? 0.0f : float(acc / double(img.data.size()));
}

ImageRGB crop_image(const ImageRGB &img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w)
{
    if (y0 + h > img.height || x0 + w > img.width)
        throw DimensionError("crop window exceeds " + std::to_string(img.height) + "x" + std::to_string(img.width));
    ImageRGB out(h, w);
    for (std::size_t y = 0; y < h; ++y)
        std::copy_n(img.data.begin() + std::ptrdiff_t(((y0 + y) * img.width + x0) * 3), w * 3,
                    out.data.begin() + std::ptrdiff_t(y * w * 3));
    return out;
}

ImageRGB flip_horizontal(const ImageRGB &img)
{
    ImageRGB out(img.height, img.width);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
    return out;
}

template <typename Real>
BasicTensor<Real> to_tensor(const std::vector<const ImageRGB *> &images)
{
    if (images.empty())
        throw DimensionError("to_tensor: no images");
    const std::size_t h = images[0]->height, w = images[0]->width;
    std::vector<Real> data(images.size() * 3 * h * w);
    for (std::size_t n = 0; n < images.size(); ++n) {
        const ImageRGB &img = *images[n];
        if (img.height != h || img.width != w)
            throw DimensionError("to_tensor: images differ in size");
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t p = 0; p < h * w; ++p)
                data[((n * 3 + c) * h * w) + p] = Real(img.data[p * 3 + c]);
    }
    return BasicTensor<Real>::from(Shape{images.size(), 3, h, w}, std::move(data));
}

template <typename Real>
ImageRGB from_tensor(const BasicTensor<Real> &t, std::size_t n)
{
    if (t.rank() != 4 || t.dim(1) != 3 || n >= t.dim(0))
        throw DimensionError("from_tensor: expected [N,3,H,W] tensor, got " + to_string(t.shape()));
    const std::size_t h = t.dim(2), w = t.dim(3);
    auto d = t.data();
    ImageRGB img(h, w);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < h * w; ++p)
            img.data[p * 3 + c] = float(d[(n * 3 + c) * h * w + p]);
    return img;
}

template BasicTensor<float> to_tensor(const std::vector<const ImageRGB *> &);
template BasicTensor<double> to_tensor(const std::vector<const ImageRGB *> &);
template ImageRGB from_tensor(const BasicTensor<float> &, std::size_t);
template ImageRGB from_tensor(const BasicTensor<double> &, std::size_t);

} // namespace rcnet
