#include <ssbd/cli.hpp>

int main(int argc, char** argv) { return ssbd::cli::run(argc, argv); }
