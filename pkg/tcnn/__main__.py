from tcnn.cli.main import main

main()
