#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "elkit/io.hpp"
#include "elkit/rng.hpp"

using namespace elkit;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    auto p = fs::temp_directory_path() / ("elkit_io_" + name);
    fs::remove(p);
    return p;
}

}  // namespace

TEST_CASE("csv round trip preserves data and names exactly") {
    Rng rng(3);
    Matrix m = rng.normal_matrix(20, 3);
    m(0, 0) = 1e-300;
    m(1, 1) = -12345.678901234567;
    TimeSeriesMatrix X(m, {"roi_a", "roi_b", "roi_c"});
    auto path = temp_file("roundtrip.csv");
    write_timeseries_csv(path, X);
    auto Y = read_timeseries_csv(path);
    CHECK(Y.names == X.names);
    CHECK(Y.data == X.data);  // 17 significant digits survive the trip
}

TEST_CASE("binary cache round trip is exact and carries names") {
    Rng rng(4);
    TimeSeriesMatrix X(rng.normal_matrix(64, 5));
    auto path = temp_file("roundtrip.elkb");
    write_timeseries_cache(path, X);
    auto Y = read_timeseries_cache(path);
    CHECK(Y.names == X.names);
    CHECK(Y.data == X.data);
    CHECK(read_timeseries(path).data == X.data);  // extension dispatch
}

TEST_CASE("cache rejects a bad magic number") {
    auto path = temp_file("bad_magic.elkb");
    std::ofstream(path, std::ios::binary) << "NOTMAGIC and some junk bytes";
    CHECK_THROWS_AS(read_timeseries_cache(path), DataError);
}

TEST_CASE("csv reader rejects ragged and non-numeric rows") {
    auto ragged = temp_file("ragged.csv");
    std::ofstream(ragged) << "a,b\n1,2\n3\n";
    CHECK_THROWS_AS(read_timeseries_csv(ragged), DataError);

    auto alpha = temp_file("alpha.csv");
    std::ofstream(alpha) << "a,b\n1,2\n3,oops\n";
    CHECK_THROWS_AS(read_timeseries_csv(alpha), DataError);

    CHECK_THROWS_AS(read_timeseries_csv(temp_file("missing.csv")), DataError);
}

TEST_CASE("labels csv round trip") {
    auto path = temp_file("labels.csv");
    std::vector<int> z{0, 1, 1, 2, 0};
    write_labels_csv(path, z);
    CHECK(read_labels_csv(path) == z);
}

TEST_CASE("matrix csv round trip") {
    Rng rng(5);
    Matrix m = rng.normal_matrix(4, 6);
    auto path = temp_file("matrix.csv");
    write_matrix_csv(path, m);
    CHECK(read_matrix_csv(path) == m);
}
