#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "handover/datagen.hpp"

using namespace handover;
using classify::GestureLabel;
using classify::MovementLabel;
using datagen::GestureGenOptions;
using datagen::MovementGenOptions;
using geometry::Point3;
using landmarks::LandmarkFrame;

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("handover_test_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

double mean_palm_speed(const std::vector<LandmarkFrame>& frames) {
    double sum = 0.0;
    for (std::size_t i = 1; i < frames.size(); ++i)
        sum += (frames[i].palm_center() - frames[i - 1].palm_center()).norm() /
               (frames[i].t - frames[i - 1].t);
    return sum / double(frames.size() - 1);
}

std::string serialize_all(const datagen::MovementDataset& ds) {
    std::ostringstream os;
    for (const auto& s : ds.samples) landmarks::serialize_stream(os, s.frames);
    return os.str();
}

} // namespace

TEST_CASE("hand templates are well-formed") {
    const auto& open = datagen::open_hand_template();
    const auto& fist = datagen::fist_template();
    const auto& occupied = datagen::occupied_template();

    SECTION("open hand spans exactly one hand length at the middle fingertip") {
        double max_dist = 0.0;
        int argmax = -1;
        for (int i = 0; i < landmarks::kNumLandmarks; ++i) {
            const double d = (open[std::size_t(i)] - open[0]).norm();
            if (d > max_dist) {
                max_dist = d;
                argmax = i;
            }
        }
        CHECK(max_dist == Catch::Approx(1.0));
        CHECK(argmax == 12); // middle fingertip
    }

    SECTION("wrist and knuckles are shared across postures") {
        // Palm landmarks must coincide so palm kinematics are independent of
        // finger articulation.
        for (int i : landmarks::kPalmIndices) {
            CHECK((open[std::size_t(i)] - fist[std::size_t(i)]).norm() == 0.0);
            CHECK((open[std::size_t(i)] - occupied[std::size_t(i)]).norm() == 0.0);
        }
    }

    SECTION("fist curls fingertips toward the palm") {
        for (int tip : {8, 12, 16, 20}) {
            CHECK(fist[std::size_t(tip)].y() < open[std::size_t(tip)].y());
            CHECK(fist[std::size_t(tip)].z() > 0.0);
        }
    }

    SECTION("canonical_pose maps labels to templates") {
        CHECK(&datagen::canonical_pose(GestureLabel::open) == &open);
        CHECK(&datagen::canonical_pose(GestureLabel::closed) == &fist);
        CHECK(&datagen::canonical_pose(GestureLabel::occupied) == &occupied);
        CHECK_THROWS_AS(datagen::canonical_pose(GestureLabel::no_hand), DomainError);
    }

    SECTION("blend endpoints reproduce the inputs") {
        const auto at0 = datagen::blend(open, fist, 0.0);
        const auto at1 = datagen::blend(open, fist, 1.0);
        for (int i = 0; i < landmarks::kNumLandmarks; ++i) {
            CHECK((at0[std::size_t(i)] - open[std::size_t(i)]).norm() == 0.0);
            CHECK((at1[std::size_t(i)] - fist[std::size_t(i)]).norm() == 0.0);
        }
    }
}

TEST_CASE("render_frame pins the palm at the placement center") {
    std::mt19937 rng(1);
    datagen::Placement pl;
    pl.rotation = datagen::detail::rotation_xyz(0.3, -0.2, 0.5);
    pl.scale = 0.25;
    pl.center = Point3(0.45, 0.38, 0.0);
    pl.depth = 0.62;

    const auto frame =
        datagen::render_frame(datagen::fist_template(), pl, 1.5, {0.0, 0.0}, rng);

    REQUIRE(frame.hand_present);
    REQUIRE(frame.landmarks.size() == std::size_t(landmarks::kNumLandmarks));
    CHECK(frame.t == 1.5);
    CHECK((frame.palm_center() - pl.center).norm() < 1e-12);
    REQUIRE(frame.palm_pixel.has_value());
    CHECK(frame.palm_pixel->u == Catch::Approx(0.45 * 640.0));
    CHECK(frame.palm_pixel->v == Catch::Approx(0.38 * 640.0));
    CHECK(frame.palm_pixel->depth == 0.62);

    SECTION("noise-free rendering is scale-exact") {
        // The middle fingertip of a rendered open hand sits one scaled hand
        // length from the rendered wrist.
        const auto open_frame =
            datagen::render_frame(datagen::open_hand_template(), pl, 0.0, {0.0, 0.0}, rng);
        const double d = (open_frame.landmarks[12] - open_frame.landmarks[0]).norm();
        CHECK(d == Catch::Approx(0.25).epsilon(1e-12));
    }
}

TEST_CASE("gesture dataset generation is balanced, bounded and deterministic") {
    GestureGenOptions o;
    o.per_class = 50;

    const auto ds = datagen::gen_gesture_dataset(o);
    REQUIRE(ds.frames.size() == 150);
    REQUIRE(ds.labels.size() == 150);

    SECTION("per-class counts are equal and block-ordered") {
        int counts[4] = {0, 0, 0, 0};
        for (const auto l : ds.labels) counts[int(l)]++;
        CHECK(counts[int(GestureLabel::open)] == 50);
        CHECK(counts[int(GestureLabel::closed)] == 50);
        CHECK(counts[int(GestureLabel::occupied)] == 50);
        CHECK(counts[int(GestureLabel::no_hand)] == 0);
    }

    SECTION("coordinates stay inside the parser's tolerance band") {
        for (const auto& f : ds.frames)
            for (const auto& p : f.landmarks) {
                CHECK(p.x() >= -0.5);
                CHECK(p.x() <= 1.5);
                CHECK(p.y() >= -0.5);
                CHECK(p.y() <= 1.5);
            }
    }

    SECTION("timestamps increase strictly so the stream parses back") {
        std::ostringstream os;
        landmarks::serialize_stream(os, ds.frames);
        std::istringstream is(os.str());
        const auto parsed = landmarks::parse_stream(is);
        CHECK(parsed.size() == ds.frames.size());
    }

    SECTION("same options give byte-identical output") {
        const auto again = datagen::gen_gesture_dataset(o);
        std::ostringstream a, b;
        landmarks::serialize_stream(a, ds.frames);
        landmarks::serialize_stream(b, again.frames);
        CHECK(a.str() == b.str());
    }

    SECTION("different seeds give different data") {
        auto o2 = o;
        o2.seed = o.seed + 1;
        const auto other = datagen::gen_gesture_dataset(o2);
        CHECK((other.frames[0].landmarks[0] - ds.frames[0].landmarks[0]).norm() > 0.0);
    }

    SECTION("training arrays use the network's class indexing") {
        const auto [inputs, labels] = datagen::gesture_training_data(ds);
        REQUIRE(inputs.size() == 150);
        CHECK(inputs[0].size() == landmarks::kFeatureCount);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            CHECK(labels[i] >= 0);
            CHECK(labels[i] <= 2);
            CHECK(labels[i] == classify::gesture_net_index(ds.labels[i]));
        }
    }
}

TEST_CASE("movement dataset agrees with the kinematic rule") {
    SECTION("noise-free generation matches the rule exactly") {
        MovementGenOptions o;
        o.per_class = 40;
        o.sigma_articulation = 0.0;
        o.sigma_image = 0.0;
        const auto ds = datagen::gen_movement_dataset(o);
        REQUIRE(ds.samples.size() == 160);
        for (const auto& s : ds.samples) {
            INFO("label " << classify::to_string(s.label));
            CHECK(datagen::kinematic_label(s.frames) == s.label);
        }
    }

    SECTION("default noise keeps at least 99% agreement") {
        MovementGenOptions o;
        o.per_class = 75;
        const auto ds = datagen::gen_movement_dataset(o);
        int agree = 0;
        for (const auto& s : ds.samples)
            if (datagen::kinematic_label(s.frames) == s.label) ++agree;
        CHECK(double(agree) / double(ds.samples.size()) >= 0.99);
    }

    SECTION("class speed bands are ordered low < medium < high") {
        MovementGenOptions o;
        o.per_class = 30;
        o.sigma_articulation = 0.0;
        o.sigma_image = 0.0;
        const auto ds = datagen::gen_movement_dataset(o);
        double mean_by_class[4] = {0, 0, 0, 0};
        int counts[4] = {0, 0, 0, 0};
        for (const auto& s : ds.samples) {
            mean_by_class[int(s.label)] += mean_palm_speed(s.frames);
            counts[int(s.label)] += 1;
        }
        for (int c = 0; c < 4; ++c) mean_by_class[c] /= double(counts[c]);

        CHECK(mean_by_class[int(MovementLabel::low_urgency)] < 0.06);
        CHECK(mean_by_class[int(MovementLabel::medium_urgency)] > 0.08);
        CHECK(mean_by_class[int(MovementLabel::medium_urgency)] < 0.24);
        CHECK(mean_by_class[int(MovementLabel::high_urgency)] > 0.24);
        CHECK(mean_by_class[int(MovementLabel::low_urgency)] <
              mean_by_class[int(MovementLabel::medium_urgency)]);
        CHECK(mean_by_class[int(MovementLabel::medium_urgency)] <
              mean_by_class[int(MovementLabel::high_urgency)]);
    }

    SECTION("a perfectly static hand is low urgency") {
        std::mt19937 rng(3);
        std::vector<LandmarkFrame> still;
        datagen::Placement pl;
        for (int j = 0; j < 30; ++j)
            still.push_back(datagen::render_frame(datagen::open_hand_template(), pl, j / 15.0,
                                                  {0.0, 0.0}, rng));
        CHECK(datagen::kinematic_label(still) == MovementLabel::low_urgency);
    }

    SECTION("kinematic rule input validation") {
        std::mt19937 rng(4);
        datagen::Placement pl;
        std::vector<LandmarkFrame> one = {
            datagen::render_frame(datagen::open_hand_template(), pl, 0.0, {0.0, 0.0}, rng)};
        CHECK_THROWS_AS(datagen::kinematic_label(one), DomainError);

        auto two = one;
        two.push_back(one[0]); // identical timestamp
        CHECK_THROWS_AS(datagen::kinematic_label(two), DomainError);

        LandmarkFrame absent;
        absent.t = 1.0;
        auto with_gap = one;
        with_gap.push_back(absent);
        CHECK_THROWS_AS(datagen::kinematic_label(with_gap), DomainError);
    }

    SECTION("generation is deterministic") {
        MovementGenOptions o;
        o.per_class = 10;
        const auto a = datagen::gen_movement_dataset(o);
        const auto b = datagen::gen_movement_dataset(o);
        CHECK(serialize_all(a) == serialize_all(b));
    }

    SECTION("training arrays are full windows with class indices") {
        MovementGenOptions o;
        o.per_class = 5;
        const auto ds = datagen::gen_movement_dataset(o);
        const auto [inputs, labels] = datagen::movement_training_data(ds);
        REQUIRE(inputs.size() == 20);
        CHECK(inputs[0].rows() == landmarks::kWindowLength);
        CHECK(inputs[0].cols() == landmarks::kFeatureCount);
        for (std::size_t i = 0; i < labels.size(); ++i)
            CHECK(labels[i] == int(ds.samples[i].label));
    }
}

TEST_CASE("gesture dataset files round-trip") {
    TempDir dir;
    GestureGenOptions o;
    o.per_class = 8;
    const auto ds = datagen::gen_gesture_dataset(o);

    datagen::write_gesture_dataset(ds, dir.file("g.jsonl"), dir.file("g_labels.csv"));
    const auto back = datagen::load_gesture_dataset(dir.file("g.jsonl"), dir.file("g_labels.csv"));

    REQUIRE(back.frames.size() == ds.frames.size());
    REQUIRE(back.labels.size() == ds.labels.size());
    for (std::size_t i = 0; i < ds.frames.size(); ++i) {
        CHECK(back.labels[i] == ds.labels[i]);
        for (int k = 0; k < landmarks::kNumLandmarks; ++k)
            CHECK((back.frames[i].landmarks[std::size_t(k)] -
                   ds.frames[i].landmarks[std::size_t(k)])
                      .norm() == 0.0);
    }

    SECTION("missing files are reported") {
        CHECK_THROWS_AS(datagen::load_gesture_dataset(dir.file("nope.jsonl"), dir.file("g_labels.csv")),
                        StreamError);
        CHECK_THROWS_AS(datagen::load_gesture_dataset(dir.file("g.jsonl"), dir.file("nope.csv")),
                        StreamError);
    }

    SECTION("label/frame count mismatch is rejected") {
        std::ofstream labels(dir.file("short.csv"));
        labels << "sample_id,label\n0,open\n";
        labels.close();
        CHECK_THROWS_AS(datagen::load_gesture_dataset(dir.file("g.jsonl"), dir.file("short.csv")),
                        DomainError);
    }

    SECTION("labels CSV header and ordering are enforced") {
        {
            std::ofstream bad(dir.file("bad_header.csv"));
            bad << "id,label\n0,open\n";
        }
        CHECK_THROWS_AS(datagen::detail::read_labels_csv(dir.file("bad_header.csv")), ParseError);
        {
            std::ofstream bad(dir.file("bad_order.csv"));
            bad << "sample_id,label\n0,open\n2,closed\n";
        }
        CHECK_THROWS_AS(datagen::detail::read_labels_csv(dir.file("bad_order.csv")), ParseError);
        {
            std::ofstream bad(dir.file("bad_row.csv"));
            bad << "sample_id,label\n0 open\n";
        }
        CHECK_THROWS_AS(datagen::detail::read_labels_csv(dir.file("bad_row.csv")), ParseError);
    }

    SECTION("unknown label names are rejected") {
        std::ofstream labels(dir.file("weird.csv"));
        labels << "sample_id,label\n";
        for (std::size_t i = 0; i < ds.frames.size(); ++i) labels << i << ",sideways\n";
        labels.close();
        CHECK_THROWS_AS(datagen::load_gesture_dataset(dir.file("g.jsonl"), dir.file("weird.csv")),
                        DomainError);
    }
}

TEST_CASE("movement dataset files round-trip through segment trimming") {
    TempDir dir;
    MovementGenOptions o;
    o.per_class = 4;
    const auto ds = datagen::gen_movement_dataset(o);

    datagen::write_movement_dataset(ds, dir.file("m.jsonl"), dir.file("m_labels.csv"));
    const auto back = datagen::load_movement_dataset(dir.file("m.jsonl"), dir.file("m_labels.csv"));

    REQUIRE(back.samples.size() == ds.samples.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        CHECK(back.samples[i].label == ds.samples[i].label);
        REQUIRE(back.samples[i].frames.size() == ds.samples[i].frames.size());
        CHECK((back.samples[i].frames[0].landmarks[0] - ds.samples[i].frames[0].landmarks[0])
                  .norm() == 0.0);
    }

    SECTION("segment/label count mismatch is rejected") {
        std::ofstream labels(dir.file("short.csv"));
        labels << "sample_id,label\n0,low_urgency\n";
        labels.close();
        CHECK_THROWS_AS(datagen::load_movement_dataset(dir.file("m.jsonl"), dir.file("short.csv")),
                        DomainError);
    }

    SECTION("a segment that is not a full window is rejected") {
        // Concatenate two samples without a gap: they merge into one
        // 60-frame segment, which no longer matches any window.
        std::vector<LandmarkFrame> merged = ds.samples[0].frames;
        const double step = merged[1].t - merged[0].t;
        double t = merged.back().t;
        for (auto f : ds.samples[1].frames) {
            t += step;
            f.t = t;
            merged.push_back(f);
        }
        {
            std::ofstream frames(dir.file("merged.jsonl"));
            landmarks::serialize_stream(frames, merged);
            std::ofstream labels(dir.file("merged.csv"));
            labels << "sample_id,label\n0,low_urgency\n";
        }
        CHECK_THROWS_AS(
            datagen::load_movement_dataset(dir.file("merged.jsonl"), dir.file("merged.csv")),
            DomainError);
    }
}
