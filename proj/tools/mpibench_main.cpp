#include "mpibench/bench.hpp"

int main(int argc, char** argv) { return mpibench::run_cli(argc, argv); }
