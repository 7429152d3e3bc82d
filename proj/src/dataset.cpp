#include "pam/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace pam {

namespace {

// Shear amplitude scale and occluded width fraction at full severity.
constexpr double kShift = 1.5;
constexpr double kOcclusion = 0.45;

constexpr char kMagic[8] = {'P', 'A', 'M', 'D', 'A', 'T', 'A', '\0'};
constexpr std::uint32_t kFormatVersion = 1;

std::vector<double> mirror(const std::vector<double>& img, std::size_t n)
{
    std::vector<double> out(img.size());
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c)
            out[r * n + c] = img[r * n + (n - 1 - c)];
    return out;
}

void add_blob(std::vector<double>& img, std::size_t n, double cr, double cc, double width, double amp)
{
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) {
            const double dr = static_cast<double>(r) - cr, dc = static_cast<double>(c) - cc;
            img[r * n + c] += amp * std::exp(-(dr * dr + dc * dc) / (2.0 * width * width));
        }
}

void standardize(std::vector<double>& img)
{
    double mean = 0.0;
    for (double v : img)
        mean += v;
    mean /= static_cast<double>(img.size());
    double var = 0.0;
    for (double v : img)
        var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(img.size()));
    for (double& v : img)
        v = (v - mean) / sd;
}

Rng split_rng(std::uint64_t seed, std::uint64_t stream)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), 0xDA7Au};
    return Rng(seq);
}

double draw_yaw(YawLaw law, Rng& rng)
{
    if (law == YawLaw::uniform)
        return uniform(rng, -90.0, 90.0);
    const double mag = uniform01(rng) < 0.8 ? uniform(rng, 0.0, 30.0) : uniform(rng, 30.0, 90.0);
    return uniform01(rng) < 0.5 ? -mag : mag;
}

} // namespace

const char* to_string(YawLaw law)
{
    return law == YawLaw::uniform ? "uniform" : "frontal-skewed";
}

YawLaw parse_yaw_law(const std::string& text)
{
    if (text == "uniform")
        return YawLaw::uniform;
    if (text == "frontal-skewed")
        return YawLaw::frontal_skewed;
    throw std::invalid_argument("unknown yaw law '" + text + "' (expected frontal-skewed or uniform)");
}

void DatasetConfig::validate() const
{
    if (identities < 2)
        throw std::invalid_argument("dataset needs at least 2 identities");
    if (per_identity < 1)
        throw std::invalid_argument("dataset needs at least 1 sample per identity");
    if (image_size < 16)
        throw std::invalid_argument("dataset image size must be at least 16");
    if (!(noise >= 0.0) || !std::isfinite(noise))
        throw std::invalid_argument("dataset noise must be finite and nonnegative");
}

double corruption_severity(double yaw_deg)
{
    if (!std::isfinite(yaw_deg) || std::abs(yaw_deg) > 90.0)
        throw std::invalid_argument("yaw " + std::to_string(yaw_deg) + " outside [-90, 90]");
    const double t = std::abs(yaw_deg) / 90.0;
    return t * t * (3.0 - 2.0 * t);
}

SampleRenderer::SampleRenderer(const DatasetConfig& cfg) : cfg_(cfg)
{
    cfg.validate();
    const std::size_t n = cfg.image_size;
    const double scale = static_cast<double>(n) / 32.0;
    Rng rng = split_rng(cfg.seed, ~std::uint64_t{0});

    // Shared head-like base so identities differ only in the details.
    std::vector<double> base(n * n, 0.0);
    const double centre = 0.5 * static_cast<double>(n - 1);
    add_blob(base, n, centre, centre, 9.0 * scale, 1.0);

    for (std::size_t id = 0; id < cfg.identities; ++id) {
        std::vector<double> half(n * n, 0.0);
        for (int b = 0; b < 8; ++b) {
            const double cr = uniform(rng, 0.2, 0.8) * static_cast<double>(n);
            const double cc = uniform(rng, 0.15, 0.5) * static_cast<double>(n);
            add_blob(half, n, cr, cc, uniform(rng, 1.5, 3.5) * scale, uniform(rng, -1.0, 1.0));
        }
        std::vector<double> t = mirror(half, n);
        for (std::size_t i = 0; i < t.size(); ++i)
            t[i] += half[i] + base[i];
        standardize(t);
        templates_.push_back(std::move(t));
    }
}

const std::vector<double>& SampleRenderer::identity_template(std::size_t label) const
{
    if (label >= templates_.size())
        throw std::out_of_range("identity " + std::to_string(label) + " out of range");
    return templates_[label];
}

SynthSample SampleRenderer::render(std::size_t label, double yaw_deg, Rng& noise_rng) const
{
    const double sev = corruption_severity(yaw_deg);
    const std::size_t n = cfg_.image_size;
    const double nd = static_cast<double>(n);
    const double side = yaw_deg < 0.0 ? -1.0 : 1.0;
    const auto& tmpl = identity_template(label);

    SynthSample s;
    s.label = label;
    s.yaw_deg = yaw_deg;
    s.image.assign(n * n, 0.0);
    const double mid = 0.5 * (nd - 1.0);
    const double occluded_from = nd * (1.0 - kOcclusion * sev);
    for (std::size_t r = 0; r < n; ++r) {
        // Horizontal shift growing with severity, sheared across rows.
        const double shift =
            side * sev * kShift * (nd / 32.0) * (3.0 + 2.0 * (static_cast<double>(r) - mid) / mid);
        for (std::size_t c = 0; c < n; ++c) {
            const double src = static_cast<double>(c) - shift;
            const double f = std::floor(src);
            const double w = src - f;
            double v = 0.0;
            for (int k = 0; k < 2; ++k) {
                const double col = f + k;
                if (col >= 0.0 && col <= nd - 1.0)
                    v += (k == 0 ? 1.0 - w : w) * tmpl[r * n + static_cast<std::size_t>(col)];
            }
            // Occlusion enters from the far side: right edge for positive yaw.
            const double depth = side > 0 ? static_cast<double>(c) : nd - 1.0 - static_cast<double>(c);
            const double mask = std::clamp(0.5 * (depth - occluded_from) + 0.5, 0.0, 1.0);
            s.image[r * n + c] = v * (1.0 - (sev > 0.0 ? mask : 0.0));
        }
    }
    for (double& v : s.image)
        v += cfg_.noise * normal(noise_rng);
    return s;
}

std::vector<SynthSample> generate_samples(const DatasetConfig& cfg, std::uint64_t stream, std::size_t per_identity,
                                          YawLaw law)
{
    const SampleRenderer renderer(cfg);
    Rng rng = split_rng(cfg.seed, stream);
    std::vector<SynthSample> out;
    out.reserve(cfg.identities * per_identity);
    for (std::size_t id = 0; id < cfg.identities; ++id)
        for (std::size_t i = 0; i < per_identity; ++i) {
            const double yaw = draw_yaw(law, rng);
            out.push_back(renderer.render(id, yaw, rng));
        }
    return out;
}

Dataset generate_dataset(const DatasetConfig& cfg)
{
    return Dataset{cfg, generate_samples(cfg, 0, cfg.per_identity, cfg.yaw_law)};
}

SynthSample flip_horizontal(const SynthSample& s, std::size_t image_size)
{
    return SynthSample{mirror(s.image, image_size), s.label, -s.yaw_deg};
}

Tensor stack_images(std::span<const SynthSample> samples, std::span<const std::size_t> indices,
                    std::size_t image_size)
{
    const std::size_t plane = image_size * image_size;
    std::vector<double> data;
    data.reserve(indices.size() * plane);
    for (std::size_t i : indices) {
        const auto& img = samples[i].image;
        if (img.size() != plane)
            throw ShapeError("sample " + std::to_string(i) + " has " + std::to_string(img.size()) +
                             " pixels, expected " + std::to_string(plane));
        data.insert(data.end(), img.begin(), img.end());
    }
    return Tensor::from({indices.size(), 1, image_size, image_size}, std::move(data));
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v)
{
    char b[4];
    for (int i = 0; i < 4; ++i)
        b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v)
{
    char b[8];
    for (int i = 0; i < 8; ++i)
        b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(b, 8);
}

std::uint64_t get_le(std::istream& is, int width)
{
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), width);
    if (is.gcount() != width)
        throw DatasetFormatError("samples.bin is truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i)
        v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

} // namespace

void export_dataset(const Dataset& ds, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    {
        std::ofstream os(dir / "samples.bin", std::ios::binary | std::ios::trunc);
        if (!os)
            throw DatasetFormatError("cannot write " + (dir / "samples.bin").string());
        os.write(kMagic, sizeof kMagic);
        put_u32(os, kFormatVersion);
        put_u64(os, ds.samples.size());
        put_u32(os, static_cast<std::uint32_t>(ds.image_size()));
        for (const auto& s : ds.samples) {
            put_u32(os, static_cast<std::uint32_t>(s.label));
            put_u64(os, std::bit_cast<std::uint64_t>(s.yaw_deg));
            for (double v : s.image)
                put_u64(os, std::bit_cast<std::uint64_t>(v));
        }
        if (!os)
            throw DatasetFormatError("failed writing " + (dir / "samples.bin").string());
    }
    std::ofstream m(dir / "manifest.txt", std::ios::trunc);
    m << "generator_version = " << dataset_generator_version << '\n'
      << "format_version = " << kFormatVersion << '\n'
      << "seed = " << ds.config.seed << '\n'
      << "identities = " << ds.config.identities << '\n'
      << "per_identity = " << ds.config.per_identity << '\n'
      << "image_size = " << ds.config.image_size << '\n'
      << "channels = 1\n"
      << "yaw_law = " << to_string(ds.config.yaw_law) << '\n'
      << "noise = " << std::bit_cast<std::uint64_t>(ds.config.noise) << '\n'
      << "count = " << ds.samples.size() << '\n'
      << "data = samples.bin\n";
    if (!m)
        throw DatasetFormatError("failed writing " + (dir / "manifest.txt").string());
}

Dataset import_dataset(const std::filesystem::path& dir)
{
    std::ifstream m(dir / "manifest.txt");
    if (!m)
        throw DatasetFormatError("cannot read " + (dir / "manifest.txt").string());
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(m, line)) {
        const auto eq = line.find(" = ");
        if (eq == std::string::npos)
            throw DatasetFormatError("malformed manifest line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
    auto num = [&](const std::string& key) -> std::uint64_t {
        auto it = kv.find(key);
        if (it == kv.end())
            throw DatasetFormatError("manifest lacks '" + key + "'");
        return std::stoull(it->second);
    };
    if (num("generator_version") != dataset_generator_version)
        throw DatasetFormatError("dataset generator version " + kv["generator_version"] + " is not supported");

    Dataset ds;
    ds.config.seed = num("seed");
    ds.config.identities = num("identities");
    ds.config.per_identity = num("per_identity");
    ds.config.image_size = num("image_size");
    ds.config.yaw_law = parse_yaw_law(kv["yaw_law"]);
    ds.config.noise = std::bit_cast<double>(num("noise"));

    std::ifstream is(dir / "samples.bin", std::ios::binary);
    if (!is)
        throw DatasetFormatError("cannot read " + (dir / "samples.bin").string());
    char magic[8];
    is.read(magic, 8);
    if (is.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
        throw DatasetFormatError("samples.bin has the wrong magic");
    if (get_le(is, 4) != kFormatVersion)
        throw DatasetFormatError("samples.bin format version is not supported");
    const std::uint64_t count = get_le(is, 8);
    const std::uint64_t size = get_le(is, 4);
    if (count != num("count") || size != ds.config.image_size)
        throw DatasetFormatError("samples.bin disagrees with the manifest");
    ds.samples.resize(count);
    for (auto& s : ds.samples) {
        s.label = get_le(is, 4);
        s.yaw_deg = std::bit_cast<double>(get_le(is, 8));
        s.image.resize(size * size);
        for (double& v : s.image)
            v = std::bit_cast<double>(get_le(is, 8));
    }
    return ds;
}

} // namespace pam
