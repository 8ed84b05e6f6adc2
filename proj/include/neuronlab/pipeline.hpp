#pragma once
// Command implementations behind the CLI. Each works inside a workspace
// directory:
//   data/<task>/     examples, proxies, template, vocabulary
//   models/          weight containers and training curves
//   sets/            attributed neuron sets
//   plans/           intervention plans
//   reports/         evaluation reports
// Errors surface as the exception types in common.hpp; the CLI maps them to
// exit codes.

#include <string>

#include "neuronlab/runconfig.hpp"

namespace neuronlab {

struct PipelinePaths {
    std::string ws;
    std::string task_dir(const std::string& task) const;
    std::string examples_path(const std::string& task, const std::string& split) const;
    std::string proxies_path(const std::string& task, const std::string& split) const;
    std::string template_path(const std::string& task) const;
    std::string vocab_path(const std::string& task) const;
    std::string model_path(const std::string& name) const;
    std::string curve_path(const std::string& name) const;
    std::string planted_info_path(const std::string& task) const;
    std::string sets_path(const std::string& name) const;
    std::string plan_path(const std::string& name) const;
    std::string report_path(const std::string& name) const;
    std::string manifest_path(const std::string& command) const;
};

void cmd_gen(const RunConfig& cfg, const std::string& ws);
void cmd_train(const RunConfig& cfg, const std::string& ws);
void cmd_plant(const RunConfig& cfg, const std::string& ws);
void cmd_attribute(const RunConfig& cfg, const std::string& ws);
void cmd_intervene(const RunConfig& cfg, const std::string& ws);
void cmd_eval(const RunConfig& cfg, const std::string& ws);
void cmd_report(const RunConfig& cfg, const std::string& ws);

}  // namespace neuronlab
