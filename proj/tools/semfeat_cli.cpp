#include "semfeat/cli/app.hpp"

int main(int argc, char** argv) { return semfeat::cli::run_cli(argc, argv); }
