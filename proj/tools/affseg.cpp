// affseg — prompt-driven 3D affordance segmentation, end to end:
//   gen-data -> lift -> pretrain -> finetune -> evaluate / segment / visualize
#include <exception>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "affseg/pipeline.hpp"

namespace {

/// Raised for errors in how the tool was invoked (flags, config keys); these
/// exit with status 2, runtime failures with status 1.
struct UsageError {
  std::string message;
};

/// Config parsing and prompt-flag validation count as usage errors.
template <class F>
auto usage_phase(F&& f) {
  try {
    return f();
  } catch (const affseg::InvalidConfig& e) {
    throw UsageError{e.what()};
  } catch (const affseg::InvalidPrompt& e) {
    throw UsageError{e.what()};
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"affseg: three-stage 3D affordance representation pipeline"};
  app.require_subcommand(1);
  const std::string root = affseg::data_root_default();
  std::function<void()> action;

  // ---- gen-data ----
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic affordance dataset");
  auto gen_opt = std::make_shared<affseg::GenDataOptions>();
  gen_opt->out_dir = root;
  gen->add_option("--out", gen_opt->out_dir, "dataset directory")->capture_default_str();
  gen->add_option("--num-objects", gen_opt->num_objects, "objects to generate")
      ->capture_default_str();
  gen->add_option("--unseen", gen_opt->unseen, "categories held out as unseen-test")
      ->capture_default_str();
  gen->add_option("--seed", gen_opt->seed, "generation seed")->capture_default_str();
  gen->add_flag("--smooth", gen_opt->smooth, "distance-smoothed heatmaps instead of binary");
  gen->add_option("--points", gen_opt->point_count, "points per object")->capture_default_str();
  gen->callback([gen_opt, &action] {
    action = [gen_opt] { affseg::gen_data_stage(*gen_opt, &std::cout); };
  });

  // ---- lift ----
  auto* lift = app.add_subcommand("lift", "lift 2D teacher features onto every cloud");
  auto lift_opt = std::make_shared<affseg::LiftOptions>();
  lift_opt->data_dir = root;
  lift_opt->out_dir.clear();
  lift->add_option("--data", lift_opt->data_dir, "dataset directory")->capture_default_str();
  lift->add_option("--out", lift_opt->out_dir, "lifted-feature directory (default DATA/lifted)");
  lift->add_option("--views", lift_opt->views, "camera ring size")->capture_default_str();
  lift->add_option("--noise", lift_opt->noise, "teacher noise scale")->capture_default_str();
  lift->add_option("--teacher-seed", lift_opt->teacher_seed, "teacher seed")
      ->capture_default_str();
  lift->callback([lift_opt, &action] {
    action = [lift_opt] {
      affseg::LiftOptions opt = *lift_opt;
      if (opt.out_dir.empty()) opt.out_dir = opt.data_dir + "/lifted";
      affseg::lift_stage(opt, &std::cout);
    };
  });

  // ---- pretrain ----
  auto* pre = app.add_subcommand("pretrain", "pre-train the 3D encoder with affinity transfer");
  auto pre_opt = std::make_shared<affseg::PretrainOptions>();
  auto pre_cfg = std::make_shared<std::string>();
  pre_opt->data_dir = root;
  pre->add_option("--config", *pre_cfg, "key=value config file")->required();
  pre->add_option("--data", pre_opt->data_dir, "dataset directory")->capture_default_str();
  pre->add_option("--lifted", pre_opt->lifted_dir, "lifted-feature directory (default DATA/lifted)");
  pre->add_option("--out", pre_opt->out_path, "backbone checkpoint path")->required();
  pre->callback([pre_opt, pre_cfg, &action] {
    action = [pre_opt, pre_cfg] {
      affseg::PretrainOptions opt = *pre_opt;
      opt.run = usage_phase(
          [&] { return affseg::load_pretrain_config(affseg::KeyValueConfig::parse_file(*pre_cfg)); });
      if (opt.lifted_dir.empty()) opt.lifted_dir = opt.data_dir + "/lifted";
      affseg::pretrain_stage(opt, &std::cout);
    };
  });

  // ---- finetune ----
  auto* fin = app.add_subcommand("finetune", "fine-tune the segmentation model");
  auto fin_opt = std::make_shared<affseg::FinetuneOptions>();
  auto fin_cfg = std::make_shared<std::string>();
  fin_opt->data_dir = root;
  fin->add_option("--config", *fin_cfg, "key=value config file")->required();
  fin->add_option("--ckpt", fin_opt->ckpt_path, "pre-trained backbone checkpoint (omit: scratch)");
  fin->add_option("--data", fin_opt->data_dir, "dataset directory")->capture_default_str();
  fin->add_option("--out", fin_opt->out_path, "model checkpoint path")->required();
  fin->callback([fin_opt, fin_cfg, &action] {
    action = [fin_opt, fin_cfg] {
      affseg::FinetuneOptions opt = *fin_opt;
      opt.run = usage_phase(
          [&] { return affseg::load_finetune_config(affseg::KeyValueConfig::parse_file(*fin_cfg)); });
      affseg::finetune_stage(opt, &std::cout);
    };
  });

  // ---- evaluate ----
  auto* eval = app.add_subcommand("evaluate", "score a split and write the metric report");
  auto eval_opt = std::make_shared<affseg::EvaluateOptions>();
  eval_opt->data_dir = root;
  eval->add_option("--model", eval_opt->model_path, "model checkpoint")->required();
  eval->add_option("--data", eval_opt->data_dir, "dataset directory")->capture_default_str();
  eval->add_option("--split", eval_opt->split, "train | seen-test | unseen-test | all")
      ->capture_default_str()
      ->check(CLI::IsMember({"train", "seen-test", "unseen-test", "all"}));
  eval->add_option("--report", eval_opt->report_path, "report file")->required();
  eval->callback([eval_opt, &action] {
    action = [eval_opt] { affseg::evaluate_stage(*eval_opt, &std::cout); };
  });

  // ---- segment ----
  auto* seg = app.add_subcommand("segment", "score one cloud for a prompt");
  auto seg_opt = std::make_shared<affseg::SegmentOptions>();
  seg->add_option("--model", seg_opt->model_path, "model checkpoint")->required();
  seg->add_option("--cloud", seg_opt->cloud_path, "input PLY")->required();
  seg->add_option("--text", seg_opt->text, "text prompt");
  seg->add_option("--image-exemplar", seg_opt->exemplar_path, "image exemplar file");
  seg->add_option("--out", seg_opt->out_path, "score array path (colored PLY lands next to it)")
      ->required();
  seg->callback([seg_opt, &action] {
    action = [seg_opt] {
      usage_phase([&] {
        if (seg_opt->text.empty() && seg_opt->exemplar_path.empty())
          throw affseg::InvalidPrompt("segment: need --text and/or --image-exemplar");
      });
      affseg::segment_stage(*seg_opt, &std::cout);
    };
  });

  // ---- visualize ----
  auto* vis = app.add_subcommand("visualize", "PCA feature colors onto a PLY");
  auto vis_opt = std::make_shared<affseg::VisualizeOptions>();
  vis->add_option("--features", vis_opt->features_path, "array container with 'features'")
      ->required();
  vis->add_option("--cloud", vis_opt->cloud_path, "input PLY")->required();
  vis->add_option("--out", vis_opt->out_path, "output PLY")->required();
  vis->callback([vis_opt, &action] {
    action = [vis_opt] { affseg::visualize_stage(*vis_opt, &std::cout); };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    action();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.message << "\n"
              << "run with --help for flag and config documentation\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
