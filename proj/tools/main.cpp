#include "reanno/cli.hpp"

int main(int argc, char** argv) { return reanno::cli::dispatch(argc, argv); }
