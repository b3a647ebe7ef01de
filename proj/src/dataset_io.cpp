#include "kdi/dataset_io.hpp"

#include <cstring>
#include <fstream>
#include <json.hpp>

#include "kdi/errors.hpp"

namespace kdi {
namespace {

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(char(v & 0xFF));
    out.push_back(char(v >> 8));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw FormatError(std::string("dataset: truncated while reading ") + what, pos);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        const std::uint16_t v =
            std::uint16_t(std::uint8_t(buf[pos])) | std::uint16_t(std::uint8_t(buf[pos + 1])) << 8;
        pos += 2;
        return v;
    }
    float f32(const char* what) {
        const std::uint32_t bits = u32(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

}  // namespace

void write_dataset(const std::string& path, const Dataset& data) {
    if (data.samples.empty()) throw ParamError("write_dataset: empty sample list");
    const std::size_t hw = std::size_t(data.height) * data.width;
    for (const Sample& s : data.samples)
        if (s.image.numel() != std::int64_t(hw) || s.mask.size() != hw)
            throw ParamError("write_dataset: sample size differs from dataset extents");

    std::string out;
    out.reserve(28 + data.samples.size() * (2 + hw * 5));
    out += "KDS1";
    put_u32(out, 1);
    put_u32(out, std::uint32_t(data.samples.size()));
    put_u32(out, std::uint32_t(data.height));
    put_u32(out, std::uint32_t(data.width));
    put_u32(out, 1);
    put_u32(out, 1);  // flags: masks present
    for (const Sample& s : data.samples) {
        put_u16(out, std::uint16_t(s.label));
        for (float v : s.image.data) put_f32(out, v);
        for (std::uint8_t m : s.mask) out.push_back(char(m));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_dataset: cannot open " + path);
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw std::runtime_error("write_dataset: short write to " + path);
}

Dataset read_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_dataset: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{buf};

    r.need(4, "magic");
    if (buf.compare(0, 4, "KDS1") != 0)
        throw FormatError("dataset: bad magic '" + buf.substr(0, 4) + "'", 0);
    r.pos = 4;
    const std::uint32_t version = r.u32("version");
    if (version != 1)
        throw FormatError("dataset: unsupported version " + std::to_string(version), 4);
    const std::uint32_t n = r.u32("sample count");
    const std::uint32_t h = r.u32("height");
    const std::uint32_t w = r.u32("width");
    const std::uint32_t channels = r.u32("channels");
    if (channels != 1)
        throw FormatError("dataset: unsupported channel count " + std::to_string(channels), 20);
    const std::uint32_t flags = r.u32("flags");
    const bool masks = (flags & 1) != 0;

    Dataset d;
    d.height = int(h);
    d.width = int(w);
    d.samples.resize(n);
    const std::size_t hw = std::size_t(h) * w;
    for (std::uint32_t i = 0; i < n; ++i) {
        Sample& s = d.samples[i];
        s.label = r.u16("label");
        s.image = Tensor::zeros({1, int(h), int(w)});
        for (std::size_t p = 0; p < hw; ++p) s.image.data[p] = r.f32("image payload");
        s.mask.assign(hw, 0);
        if (masks) {
            r.need(hw, "mask payload");
            for (std::size_t p = 0; p < hw; ++p) {
                const std::uint8_t m = std::uint8_t(buf[r.pos + p]);
                if (m > 2)
                    throw FormatError("dataset: mask byte " + std::to_string(int(m)) +
                                          " outside {0,1,2}",
                                      r.pos + p);
                s.mask[p] = m;
            }
            r.pos += hw;
        }
    }
    if (r.pos != buf.size())
        throw FormatError("dataset: " + std::to_string(buf.size() - r.pos) +
                              " trailing bytes after last sample",
                          r.pos);
    return d;
}

void write_catalog(const std::string& path, const ClassCatalog& catalog) {
    nlohmann::json j;
    j["classes"] = nlohmann::json::array();
    for (const ClassCatalog::Entry& e : catalog.entries)
        j["classes"].push_back({{"id", e.class_id},
                                {"category", category_name(e.category)},
                                {"base", e.base_shape},
                                {"mark", e.mark}});
    std::ofstream f(path);
    if (!f) throw std::runtime_error("write_catalog: cannot open " + path);
    f << j.dump(2) << "\n";
}

ClassCatalog read_catalog(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_catalog: cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("catalog: ") + e.what(), 0);
    }
    ClassCatalog c;
    for (const auto& e : j.at("classes")) {
        ClassCatalog::Entry entry;
        entry.class_id = e.at("id").get<int>();
        const std::string cat = e.at("category").get<std::string>();
        if (cat == "CIRCULAR") entry.category = Category::CIRCULAR;
        else if (cat == "RECTANGULAR") entry.category = Category::RECTANGULAR;
        else if (cat == "TAIL") entry.category = Category::TAIL;
        else if (cat == "NONE") entry.category = Category::NONE;
        else throw FormatError("catalog: unknown category '" + cat + "'", 0);
        entry.base_shape = e.at("base").get<std::string>();
        entry.mark = e.at("mark").get<std::string>();
        c.entries.push_back(entry);
    }
    return c;
}

}  // namespace kdi
