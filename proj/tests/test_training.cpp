#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "coin/training.hpp"
#include "test_util.hpp"

using namespace coin;

namespace {

struct Fixture {
    Dataset ds;
    ClassifierSpec cs;
    GeneratorSpec gs;
    DiscriminatorSpec dsp;
    TrainConfig tc;

    Fixture() {
        ds = build_dataset(coin::testing::small_phantom(40, 32));
        cs.input_size = 32;
        cs.base_channels = 2;
        cs.depth = 2;
        gs.input_size = 32;
        gs.depth = 3;
        gs.base_channels = 2;
        gs.n_skip = 3;
        dsp.input_size = 32;
        dsp.depth = 3;
        dsp.base_channels = 2;
        tc.batch_size = 8;
        tc.classifier_epochs = 2;
        tc.gan_steps = 3;
        tc.seed = 11;
    }
};

std::vector<std::vector<float>> values(const nn::ParamStore<float>& s) {
    std::vector<std::vector<float>> out;
    for (const auto& [_, p] : s.params()) out.push_back(p->value.vec());
    return out;
}

}  // namespace

TEST(TrainConfig, RejectsInvalidFields) {
    TrainConfig c;
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.adam_beta1 = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.d_updates_per_g = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainClassifier, ZeroEpochsKeepsInitialization) {
    Fixture f;
    f.tc.classifier_epochs = 0;
    auto run = train_classifier<float>(f.ds, f.cs, f.tc);
    const Classifier<float> init(f.cs, derive_seed(f.tc.seed, "classifier.init"));
    EXPECT_EQ(run.model.params().checksum(), init.params().checksum());
    EXPECT_TRUE(run.history.empty());
    EXPECT_EQ(run.best_epoch, 0);
}

TEST(TrainClassifier, SingleClassIsAnError) {
    PhantomConfig c = coin::testing::small_phantom(20, 32);
    c.abnormal_fraction = 0;
    Fixture f;
    EXPECT_THROW(train_classifier<float>(build_dataset(c), f.cs, f.tc), ConfigError);
}

TEST(TrainClassifier, SameSeedSameHistory) {
    Fixture f;
    auto a = train_classifier<float>(f.ds, f.cs, f.tc);
    auto b = train_classifier<float>(f.ds, f.cs, f.tc);
    ASSERT_EQ(a.history.size(), 2u);
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        EXPECT_EQ(a.history[i].train_loss, b.history[i].train_loss);
        EXPECT_EQ(a.history[i].val_acc, b.history[i].val_acc);
    }
    EXPECT_EQ(a.model.params().checksum(), b.model.params().checksum());
    for (const auto& r : a.history) {
        EXPECT_TRUE(std::isfinite(r.train_loss) && std::isfinite(r.val_loss));
        EXPECT_TRUE(r.train_acc >= 0 && r.train_acc <= 1 && r.val_acc >= 0 && r.val_acc <= 1);
    }
}

TEST(TrainClassifier, KeepsBestValidationWeights) {
    Fixture f;
    f.tc.classifier_epochs = 4;
    auto run = train_classifier<float>(f.ds, f.cs, f.tc);
    auto [_, acc] = evaluate_classifier(run.model, f.ds.subset(f.ds.split.val));
    EXPECT_DOUBLE_EQ(acc, run.best_val_acc);
    for (const auto& r : run.history) EXPECT_LE(r.val_acc, run.best_val_acc);
}

TEST(TrainClassifier, LearnsThePhantomTask) {
    Fixture f;
    f.ds = build_dataset(coin::testing::small_phantom(120, 32));
    f.tc.classifier_epochs = 12;
    f.tc.classifier_alpha = 2e-3;  // few steps
    f.cs.base_channels = 4;
    f.cs.depth = 3;
    auto run = train_classifier<float>(f.ds, f.cs, f.tc);
    EXPECT_LT(run.history.back().train_loss, run.history.front().train_loss);
    EXPECT_GE(run.best_val_acc, 0.9);
}

TEST(TrainGan, ZeroStepsKeepsInitialization) {
    Fixture f;
    f.tc.gan_steps = 0;
    Classifier<float> clf(f.cs, 1);
    auto run = train_gan<float>(f.ds, clf, f.gs, f.dsp, {}, f.tc);
    const Generator<float> g0(f.gs, derive_seed(f.tc.seed, "generator.init"));
    const Discriminator<float> d0(f.dsp, derive_seed(f.tc.seed, "discriminator.init"));
    EXPECT_EQ(run.generator.params().checksum(), g0.params().checksum());
    EXPECT_EQ(run.discriminator.params().checksum(), d0.params().checksum());
    EXPECT_TRUE(run.history.empty());
}

TEST(TrainGan, ClassifierStaysFrozen) {
    Fixture f;
    Classifier<float> clf(f.cs, 2);
    const auto before = clf.params().checksum();
    const auto snap = values(clf.params());
    auto run = train_gan<float>(f.ds, clf, f.gs, f.dsp, {}, f.tc);
    EXPECT_EQ(clf.params().checksum(), before);
    EXPECT_EQ(values(clf.params()), snap);
    // the generator itself did move
    const Generator<float> g0(f.gs, derive_seed(f.tc.seed, "generator.init"));
    EXPECT_NE(run.generator.params().checksum(), g0.params().checksum());
}

TEST(TrainGan, HistoryIsFiniteAndComplete) {
    Fixture f;
    Classifier<float> clf(f.cs, 3);
    auto run = train_gan<float>(f.ds, clf, f.gs, f.dsp, {}, f.tc);
    ASSERT_EQ(run.history.size(), 3u);
    for (const auto& r : run.history) {
        EXPECT_TRUE(std::isfinite(r.d_loss));
        for (const char* k : {"gan", "f", "idt", "tv"}) {
            ASSERT_TRUE(r.g.terms.count(k)) << k;
            EXPECT_TRUE(std::isfinite(r.g.terms.at(k))) << k;
            EXPECT_GE(r.g.terms.at(k), 0.0) << k;
        }
        EXPECT_TRUE(std::isfinite(r.g.total));
    }
}

TEST(TrainGan, SameSeedSameWeights) {
    Fixture f;
    Classifier<float> clf(f.cs, 4);
    auto a = train_gan<float>(f.ds, clf, f.gs, f.dsp, {}, f.tc);
    auto b = train_gan<float>(f.ds, clf, f.gs, f.dsp, {}, f.tc);
    EXPECT_EQ(a.generator.params().checksum(), b.generator.params().checksum());
    EXPECT_EQ(a.discriminator.params().checksum(), b.discriminator.params().checksum());
    for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].g.total, b.history[i].g.total);
}

TEST(TrainGan, ConditionalDiscriminatorMustMatchConditionCount) {
    Fixture f;
    Classifier<float> clf(f.cs, 5);
    f.gs.n_conditions = 2;
    EXPECT_THROW(train_gan<float>(f.ds, clf, f.gs, f.dsp, {}, f.tc), ConfigError);
    f.dsp.conditional = true;
    auto run = train_gan<float>(f.ds, clf, f.gs, f.dsp, {}, f.tc);
    EXPECT_EQ(run.history.size(), 3u);
}

TEST(TrainGan, MaskedReconstructionVariantRuns) {
    Fixture f;
    Classifier<float> clf(f.cs, 6);
    f.gs.n_conditions = 2;
    f.dsp.conditional = true;
    GanOptions opt;
    opt.use_masks = true;
    auto run = train_gan<float>(f.ds, clf, f.gs, f.dsp, {}, f.tc, opt);
    for (const auto& r : run.history) EXPECT_TRUE(std::isfinite(r.g.terms.at("idt")));
}

TEST(TrainGan, SizeMismatchIsAnError) {
    Fixture f;
    ClassifierSpec other = f.cs;
    other.input_size = 64;
    Classifier<float> clf(other, 7);
    EXPECT_THROW(train_gan<float>(f.ds, clf, f.gs, f.dsp, {}, f.tc), ConfigError);
}

TEST(TrainGan, CheckpointHookFiresOnSchedule) {
    Fixture f;
    f.tc.gan_steps = 5;
    f.tc.checkpoint_every = 2;
    Classifier<float> clf(f.cs, 8);
    std::vector<int> steps;
    train_gan<float>(f.ds, clf, f.gs, f.dsp, {}, f.tc, {}, nullptr,
                     [&](int s, Generator<float>&, Discriminator<float>&) { steps.push_back(s); });
    EXPECT_EQ(steps, (std::vector<int>{2, 4}));
}

TEST(TrainGan, ProgressLinesNameEveryTerm) {
    Fixture f;
    f.tc.log_every = 1;
    Classifier<float> clf(f.cs, 9);
    std::ostringstream log;
    train_gan<float>(f.ds, clf, f.gs, f.dsp, {}, f.tc, {}, &log);
    const std::string s = log.str();
    EXPECT_NE(s.find("gan step 3"), std::string::npos);
    for (const char* k : {" gan ", " f ", " idt ", " tv ", " total "}) EXPECT_NE(s.find(k), std::string::npos) << k;
}

TEST(BalancedSampler, HalfOfEachClass) {
    Fixture f;
    detail::BalancedSampler s(f.ds.subset(f.ds.split.train), 3);
    for (int k = 0; k < 10; ++k) {
        const auto b = s.next(7);
        int abn = 0;
        for (const auto* x : b) abn += x->label;
        EXPECT_EQ(abn, 4);
    }
}

TEST(History, CsvColumns) {
    const auto dir = std::filesystem::temp_directory_path() / "coin_test_history";
    std::filesystem::create_directories(dir);
    StepRecord r;
    r.step = 1;
    r.g.terms = {{"gan", 0.5}, {"f", 0.1}, {"idt", 0.2}, {"tv", 0.3}};
    r.g.total = 1.0;
    write_gan_history(dir / "gan.csv", {r});
    std::ifstream in(dir / "gan.csv");
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    EXPECT_EQ(header, "step,d_loss,gan,f,idt,tv,total");
    EXPECT_EQ(row, "1,0,0.5,0.1,0.2,0.3,1");
}
