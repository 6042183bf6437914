#include "lumina/cli.hpp"

int main(int argc, char** argv) { return lumina::cli::run(argc, argv); }
