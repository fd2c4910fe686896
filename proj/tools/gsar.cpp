#include <gsar/cli.hpp>

int main(int argc, char** argv) { return gsar::cli::run(argc, argv); }
