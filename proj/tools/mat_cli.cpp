#include "mat/cli.hpp"

int main(int argc, char** argv)
{
    return mat::run_cli(argc, argv);
}
