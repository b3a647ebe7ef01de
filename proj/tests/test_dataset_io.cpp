#include <doctest.h>
#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <string>

#include "kdi/dataset_io.hpp"
#include "kdi/report.hpp"
#include "kdi/synth.hpp"

namespace fs = std::filesystem;
using kdi::Dataset;
using kdi::Split;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("kdi_io_test_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const char* name) const { return (path / name).string(); }
};

Dataset tiny_dataset() {
    kdi::SynthConfig c;
    c.n_train = 4;
    c.n_test = 2;
    c.image_size = 32;
    c.seed = 42;
    return generate_split(c, Split::TRAIN);
}

}  // namespace

TEST_CASE("dataset round-trip is byte-identical") {
    TempDir tmp;
    const Dataset d = tiny_dataset();
    const std::string path = tmp.file("t.kds");
    kdi::write_dataset(path, d);

    const Dataset back = kdi::read_dataset(path);
    REQUIRE(back.samples.size() == d.samples.size());
    CHECK(back.height == d.height);
    CHECK(back.width == d.width);
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
        CHECK(back.samples[i].label == d.samples[i].label);
        CHECK(back.samples[i].mask == d.samples[i].mask);
        CHECK(std::memcmp(back.samples[i].image.data.data(), d.samples[i].image.data.data(),
                          d.samples[i].image.data.size() * sizeof(float)) == 0);
    }

    // Writing the re-read dataset reproduces the file bytes exactly.
    const std::string path2 = tmp.file("t2.kds");
    kdi::write_dataset(path2, back);
    CHECK(kdi::read_text_file(path) == kdi::read_text_file(path2));

    // Header spot checks: magic, version 1, n, H, W, channels, flags.
    const std::string bytes = kdi::read_text_file(path);
    CHECK(bytes.compare(0, 4, "KDS1") == 0);
    CHECK(std::uint8_t(bytes[4]) == 1);
    CHECK(std::uint8_t(bytes[8]) == 4);
    CHECK(std::uint8_t(bytes[12]) == 32);
    CHECK(bytes.size() == 28u + 4u * (2u + 32u * 32u * 4u + 32u * 32u));
}

TEST_CASE("dataset format errors carry the byte offset") {
    TempDir tmp;
    const Dataset d = tiny_dataset();
    const std::string path = tmp.file("good.kds");
    kdi::write_dataset(path, d);
    const std::string good = kdi::read_text_file(path);
    const std::string bad_path = tmp.file("bad.kds");

    {  // bad magic at offset 0
        std::string bad = good;
        bad[0] = 'X';
        kdi::write_text_file(bad_path, bad);
        bool threw = false;
        try {
            kdi::read_dataset(bad_path);
        } catch (const kdi::FormatError& e) {
            threw = true;
            CHECK(e.offset == 0);
            CHECK(std::string(e.what()).find("magic") != std::string::npos);
        }
        CHECK(threw);
    }
    {  // unsupported version at offset 4
        std::string bad = good;
        bad[4] = 2;
        kdi::write_text_file(bad_path, bad);
        bool threw = false;
        try {
            kdi::read_dataset(bad_path);
        } catch (const kdi::FormatError& e) {
            threw = true;
            CHECK(e.offset == 4);
        }
        CHECK(threw);
    }
    {  // mask byte outside {0,1,2}; first mask byte sits at 28 + 2 + H*W*4
        const std::size_t mask0 = 28 + 2 + 32 * 32 * 4;
        std::string bad = good;
        bad[mask0 + 5] = 3;
        kdi::write_text_file(bad_path, bad);
        bool threw = false;
        try {
            kdi::read_dataset(bad_path);
        } catch (const kdi::FormatError& e) {
            threw = true;
            CHECK(e.offset == mask0 + 5);
            CHECK(std::string(e.what()).find("mask") != std::string::npos);
        }
        CHECK(threw);
    }
    {  // truncated payload
        std::string bad = good.substr(0, good.size() - 5);
        kdi::write_text_file(bad_path, bad);
        bool threw = false;
        try {
            kdi::read_dataset(bad_path);
        } catch (const kdi::FormatError& e) {
            threw = true;
            CHECK(std::string(e.what()).find("truncated") != std::string::npos);
            CHECK(e.offset <= bad.size());
        }
        CHECK(threw);
    }
    {  // header promises more samples than the payload holds
        std::string bad = good;
        bad[8] = 5;  // n = 5, data for 4
        kdi::write_text_file(bad_path, bad);
        CHECK_THROWS_AS(kdi::read_dataset(bad_path), kdi::FormatError);
    }
    {  // trailing garbage after the last sample
        std::string bad = good + '\0';
        kdi::write_text_file(bad_path, bad);
        bool threw = false;
        try {
            kdi::read_dataset(bad_path);
        } catch (const kdi::FormatError& e) {
            threw = true;
            CHECK(e.offset == good.size());
            CHECK(std::string(e.what()).find("trailing") != std::string::npos);
        }
        CHECK(threw);
    }
}

TEST_CASE("write_dataset validates its input") {
    TempDir tmp;
    Dataset empty;
    empty.height = empty.width = 32;
    CHECK_THROWS_AS(kdi::write_dataset(tmp.file("x.kds"), empty), kdi::ParamError);

    Dataset d = tiny_dataset();
    d.samples[1].mask.pop_back();
    CHECK_THROWS_AS(kdi::write_dataset(tmp.file("y.kds"), d), kdi::ParamError);
}

TEST_CASE("catalog sidecar round-trip") {
    TempDir tmp;
    const kdi::ClassCatalog cat = kdi::ClassCatalog::standard();
    const std::string path = tmp.file("catalog.json");
    kdi::write_catalog(path, cat);
    const kdi::ClassCatalog back = kdi::read_catalog(path);
    REQUIRE(back.entries.size() == cat.entries.size());
    for (std::size_t i = 0; i < cat.entries.size(); ++i) {
        CHECK(back.entries[i].class_id == cat.entries[i].class_id);
        CHECK(back.entries[i].category == cat.entries[i].category);
        CHECK(back.entries[i].base_shape == cat.entries[i].base_shape);
        CHECK(back.entries[i].mark == cat.entries[i].mark);
    }

    kdi::write_text_file(path, "not json at all{");
    CHECK_THROWS_AS(kdi::read_catalog(path), kdi::FormatError);
}
