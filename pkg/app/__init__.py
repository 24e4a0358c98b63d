# Switchback experiments for Markovian systems - app package
